"""Invariant dynamics of the truncated model: damped stochastic wave flow.

The step is a Strang splitting: an exact Ornstein-Uhlenbeck half step on
the velocity (preserving the white-noise marginal exactly), a symplectic
velocity-Verlet step of the nonlinear wave part, and a second OU half
step.  Modes above the cutoff N decouple exactly and evolve by the exact
linear Gaussian update, never time-stepped.  All invariance bias sits in
the Verlet substep at O(dt^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.stats

from . import rng as _rng
from .fields import sample_mu_s
from .gibbs import GibbsParams, embed_with_free_modes, sample_rho_mala, taming_m
from .propagators import StepCoefficients
from .spectral import (
    SpectralField, SpectralGrid, chi_multiplier, from_physical, grid_geometry,
    sobolev_norm, to_physical,
)

__all__ = [
    "FieldPair", "FlowConfig", "EnsembleFlow", "simulate", "observables",
    "invariance_test", "decompose", "linear_companion",
]

OBSERVABLE_MODES = ((0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1), (2, 0, 0))


@dataclass
class FieldPair:
    u: SpectralField
    v: SpectralField


@dataclass
class FlowConfig:
    p: GibbsParams
    dt: float = 1e-3
    T: float = 1.0
    integrator: str = "strang_split"
    n_grid: int | None = None   # simulation band, defaults to p.N

    def __post_init__(self):
        if self.integrator not in ("strang_split", "exponential_euler"):
            raise ValueError("unknown integrator")
        if self.dt > 1.0 / (4 * self.p.N):
            raise ValueError("dt must satisfy dt <= 1/(4N)")
        if self.n_grid is None:
            self.n_grid = self.p.N

    @property
    def grid(self) -> SpectralGrid:
        return SpectralGrid(self.n_grid)

    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9:
            raise ValueError("T must be a multiple of dt")
        return n


class EnsembleFlow:
    """Batched flow of the truncated dynamics; one object = one noise realization.

    Noise is keyed by (seed, stream, step) and drawn for the whole batch, so a
    run is a pure function of (seed, batch size, config).
    """

    def __init__(self, cfg: FlowConfig, state: FieldPair, seed: int, nonlinear: bool = True,
                 noise: bool = True):
        self.cfg = cfg
        self.p = cfg.p
        self.grid = cfg.grid
        self.seed = seed
        self.nonlinear = nonlinear
        self.noise = noise
        self.u = state.u.coeff.copy().astype(np.complex128)
        self.v = state.v.coeff.copy().astype(np.complex128)
        self.step_index = 0
        geom = grid_geometry(self.grid)
        self.br2 = geom["bracket2"]
        self.low = chi_multiplier(self.grid, self.p.kind, min(self.p.N, self.grid.n_grid))
        self.high = 1.0 - self.low
        self.has_high = bool(np.any(self.high > 0))
        dt = cfg.dt
        self.ou_decay = np.exp(-0.5 * dt)            # half-step e^{-tau}, tau = dt/2
        self.ou_std = np.sqrt(1.0 - np.exp(-dt))
        self.sc = StepCoefficients(self.grid, dt)
        self.sigma_n = self.p.sigma_n

    def _force(self, u):
        """-(1-Delta)u + sigma pi_N :($pi_N u)^2: - M(:(pi_N u)^2:) pi_N u."""
        out = -(self.br2 * u)
        if not self.nonlinear:
            return out
        p = self.p
        un = self.low * u
        f = SpectralField(self.grid, un)
        P = self.grid.pad_points(2)
        phys = to_physical(f, P)
        wick = from_physical(phys * phys - self.sigma_n, self.grid).coeff
        w = np.real(wick[..., 0, 0, 0])
        m = taming_m(w, p.A)
        out = out + self.low * (p.sigma * wick) - np.asarray(m)[..., None, None, None] * un
        return out

    def _draws(self, count):
        if not self.noise:
            return [0.0] * count
        gen = _rng.generator(self.seed, _rng.DYN_OU, step=self.step_index)
        batch = self.u.shape[:-3]
        block = _rng.hermitian_unit_normal(self.grid, gen, batch=(count,) + batch)
        return [block[i] for i in range(count)]

    def step(self):
        dt = self.cfg.dt
        ou_decay = self.ou_decay if self.noise else 1.0
        if self.cfg.integrator == "strang_split":
            if self.has_high:
                z1, z2, h1, h2 = self._draws(4)
            else:
                z1, z2 = self._draws(2)
                h1 = h2 = 0.0
            # OU half step on the velocity, low modes
            self.v = self.low * (ou_decay * self.v + self.ou_std * z1) + self.high * self.v
            # velocity-Verlet on the low block
            fu = self._force(self.u) * self.low
            u_new = self.u + self.low * (dt * self.v + 0.5 * dt * dt * fu)
            fu_new = self._force(u_new) * self.low
            self.v = self.v + self.low * (0.5 * dt * (fu + fu_new))
            self.u = self.low * u_new + self.high * self.u
            # second OU half step
            self.v = self.low * (ou_decay * self.v + self.ou_std * z2) + self.high * self.v
            # exact linear stochastic update of the high block
            if self.has_high:
                hp, hv = self.sc.homogeneous(self.u, self.v)
                n1, n2 = self.sc.noise_free(h1, h2) if self.noise else (0.0, 0.0)
                self.u = self.low * self.u + self.high * (hp + n1)
                self.v = self.low * self.v + self.high * (hv + n2)
        else:  # exponential Euler: exact linear flow plus first-order forcing
            z1, z2 = self._draws(2)
            nl = (self._force(self.u) + self.br2 * self.u) * self.low
            hp, hv = self.sc.homogeneous(self.u, self.v)
            n1, n2 = self.sc.noise_free(z1, z2)
            self.u = hp + n1 + self.sc.j0 * nl
            self.v = hv + n2 + self.sc.dD * nl
        if not np.all(np.isfinite(self.u.real)):
            raise FloatingPointError(f"flow overflow at t = {self.step_index * dt:.6f}")
        self.step_index += 1

    def state(self) -> FieldPair:
        return FieldPair(SpectralField(self.grid, self.u.copy()),
                         SpectralField(self.grid, self.v.copy()))

    def run(self, n_steps: int, callback=None):
        for _ in range(n_steps):
            self.step()
            if callback is not None:
                callback(self)


def observables(state: FieldPair, p: GibbsParams) -> dict:
    """Scalar diagnostics of one state (batched): energy, Wick integrals, modes."""
    u, v = state.u, state.v
    un = SpectralField(u.grid, u.coeff * chi_multiplier(u.grid, p.kind, min(p.N, u.grid.n_grid)))
    w2 = np.sum(np.abs(un.coeff) ** 2, axis=(-3, -2, -1)) - p.sigma_n
    P = u.grid.pad_points(3)
    phys = to_physical(un, P)
    w3 = (np.mean(phys ** 3, axis=(-3, -2, -1))
          - 3.0 * p.sigma_n * np.real(un.coeff[..., 0, 0, 0]))
    out = {
        "energy": 0.5 * sobolev_norm(v, 0.0) ** 2 + 0.5 * sobolev_norm(u, 1.0) ** 2,
        "wick2": w2,
        "wick3": w3,
        "v_l2sq": sobolev_norm(v, 0.0) ** 2,
    }
    L = u.grid.n_modes_axis
    for n in OBSERVABLE_MODES:
        idx = tuple(c % L for c in n)
        out[f"mode{abs(n[0])}{abs(n[1])}{abs(n[2])}"] = np.abs(
            u.coeff[..., idx[0], idx[1], idx[2]]) ** 2
    return out


def simulate(u0: FieldPair, cfg: FlowConfig, seed: int, record_every: int = 1,
             store_fields: bool = False, nonlinear: bool = True):
    """Integrate one batch of initial pairs; returns observable series (+fields).

    Bitwise deterministic given (seed, cfg, u0).
    """
    flow = EnsembleFlow(cfg, u0, seed, nonlinear=nonlinear)
    n = cfg.n_steps()
    times = [0.0]
    series = [observables(flow.state(), cfg.p)]
    fields = [flow.state()] if store_fields else None
    for j in range(n):
        flow.step()
        if (j + 1) % record_every == 0 or j == n - 1:
            times.append((j + 1) * cfg.dt)
            series.append(observables(flow.state(), cfg.p))
            if store_fields:
                fields.append(flow.state())
    merged = {k: np.stack([s[k] for s in series]) for k in series[0]}
    result = {"times": np.array(times), "series": merged, "seed": seed}
    if store_fields:
        result["fields"] = fields
    return result


def linear_companion(u0: FieldPair, cfg: FlowConfig, seed: int):
    """The same splitting flow with the nonlinearity off, same noise stream.

    This is the discrete linear object matched path-by-path to the nonlinear
    run, so decompositions cancel exactly when sigma = A = 0.
    """
    return simulate(u0, cfg, seed, record_every=1, store_fields=True, nonlinear=False)


def _paired_moment_report(a, b, n_boot=200, seed=0):
    """Mean/variance differences of two paired samples with bootstrap errors."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    gen = np.random.default_rng(seed)
    n = len(a)
    dm, dv = [], []
    for _ in range(n_boot):
        idx = gen.integers(0, n, n)
        dm.append(np.mean(b[idx]) - np.mean(a[idx]))
        dv.append(np.var(b[idx], ddof=1) - np.var(a[idx], ddof=1))
    return {
        "mean_diff": float(np.mean(b) - np.mean(a)),
        "mean_se": float(np.std(dm, ddof=1)),
        "var_diff": float(np.var(b, ddof=1) - np.var(a, ddof=1)),
        "var_se": float(np.std(dv, ddof=1)),
        "ks_stat": float(scipy.stats.ks_2samp(a, b).statistic),
        "ks_p": float(scipy.stats.ks_2samp(a, b).pvalue),
    }


def invariance_test(p: GibbsParams, cfg: FlowConfig, n_samples: int, seed: int,
                    richardson: bool = True, mala_step: float = 0.02,
                    z_tol: float = 3.0) -> dict:
    """Evolve a Gibbs ensemble to time T and compare observable laws at 0 and T.

    Initial data: u ~ rho_N via the exact-stationary-law sampler (with free
    high modes above N on the simulation grid) and velocity ~ white noise.
    Reports paired moment differences with bootstrap errors, two-sample KS
    statistics, and a Richardson dt-bias estimate per observable.
    """
    grid = cfg.grid
    if p.sigma == 0.0 and p.A == 0.0:
        u0 = sample_mu_s(grid, 1.0, seed, stream=_rng.INIT, batch=(n_samples,))
        info = {"acceptance": 1.0, "iat_wick2": 0.0}
    else:
        low, info = sample_rho_mala(p, n_samples, seed, step=mala_step)
        u0 = embed_with_free_modes(low, grid, seed + 1)
    v0 = sample_mu_s(grid, 0.0, seed + 2, stream=_rng.INIT, batch=(n_samples,))
    state0 = FieldPair(u0, v0)
    obs0 = observables(state0, p)

    def evolve(dt_val, tag):
        c = FlowConfig(p, dt=dt_val, T=cfg.T, integrator=cfg.integrator, n_grid=cfg.n_grid)
        flow = EnsembleFlow(c, state0, seed + 1000 + tag)
        flow.run(c.n_steps())
        return observables(flow.state(), p)

    obsT = evolve(cfg.dt, 0)
    bias = {}
    if richardson:
        obsT_half = evolve(cfg.dt / 2.0, 1)
        for k in obs0:
            bias[k] = 4.0 / 3.0 * abs(float(np.mean(obsT[k]) - np.mean(obsT_half[k])))
    report = {"observables": {}, "sampler": info, "n_samples": n_samples,
              "dt": cfg.dt, "T": cfg.T, "seed": seed}
    all_pass = True
    for k in obs0:
        r = _paired_moment_report(obs0[k], obsT[k], seed=seed)
        r["richardson_bias"] = bias.get(k, 0.0)
        tol = z_tol * max(r["mean_se"], 1e-12) + r["richardson_bias"]
        r["mean_pass"] = bool(abs(r["mean_diff"]) <= tol)
        vtol = z_tol * max(r["var_se"], 1e-12) + r["richardson_bias"]
        r["var_pass"] = bool(abs(r["var_diff"]) <= vtol)
        all_pass &= r["mean_pass"] and r["var_pass"]
        report["observables"][k] = r
    report["all_pass"] = bool(all_pass)
    return report


def decompose(result: dict, linear: dict, p: GibbsParams, fit_window=None) -> dict:
    """Remainder of the second-order expansion along a matched linear run.

    remainder(t) = u(t) - lin(t) - sigma*obj20(t) with obj20 the Duhamel
    integral of the Wick square of the projected linear flow, built from the
    same noise stream.  Returns the remainder trajectory's terminal shell
    powers and fitted slopes for remainder and obj20.
    """
    from .objects import Trajectory, build_obj20
    from .spectral import fit_spectral_slope_full, shell_average_power
    if result["seed"] != linear["seed"]:
        raise ValueError("nonlinear and linear runs must share seed and noise")
    if "fields" not in result or "fields" not in linear:
        raise ValueError("runs must store fields for decomposition")
    times = result["times"]
    grid = result["fields"][0].u.grid
    lin_stack = np.stack([st.u.coeff for st in linear["fields"]])
    # batched trajectory: time axis first, batch second
    lin_traj = Trajectory(grid, times, lin_stack)
    obj20 = build_obj20(lin_traj, p.N, p.kind)
    rem_T = (result["fields"][-1].u.coeff - lin_stack[-1] - p.sigma * obj20.data[-1])
    batch = rem_T.shape[:-3]
    pw_rem = np.abs(rem_T) ** 2
    pw_obj = np.abs(obj20.data[-1]) ** 2
    if batch:
        pw_rem = np.mean(pw_rem, axis=tuple(range(len(batch))))
        pw_obj = np.mean(pw_obj, axis=tuple(range(len(batch))))
    kw = {} if fit_window is None else dict(zip(("k_min", "k_max"), fit_window))
    sh_r = shell_average_power(pw_rem, grid, **kw)
    sh_o = shell_average_power(pw_obj, grid, **kw)
    out = {"remainder_terminal_power": pw_rem, "obj20_terminal_power": pw_obj,
           "remainder_max": float(np.max(np.abs(rem_T)))}
    try:
        out["slope_remainder"] = fit_spectral_slope_full((sh_r[0], sh_r[1]))
        out["slope_obj20"] = fit_spectral_slope_full((sh_o[0], sh_o[1]))
    except ValueError:
        out["slope_remainder"] = out["slope_obj20"] = None
    return out
