"""Variational representation of the partition function and witness drifts.

-log E[exp(-F(Y_N(1)))] equals the infimum over adapted drifts of
E[F(Y_N(1) + Upsilon_N(1)) + (1/2) int_0^1 ||Upsilon_dot||_{H^1}^2 dt].
For the Gibbs potential the change of variables through the quadratic
process Z turns the integrand into four explicit terms (cubic coupling,
cubic drift, taming and cost) evaluated at Theta_N = Upsilon_N + sigma Z_N.

Drifts are piecewise constant on K intervals with an optional per-mode
diagonal feedback on the controlled state at interval starts; the witness
drift concentrates at frequency M and switches on at t = 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .fields import sigma_n
from .gibbs import GibbsParams
from .spectral import (
    SpectralField, SpectralGrid, chi_multiplier, from_physical, grid_geometry,
    hermitian_reflect, smoothstep, to_physical,
)

__all__ = [
    "DriftParam", "WitnessDrift", "QuadraticFunctional", "bd_objective",
    "optimize_drift", "alpha_m", "witness_profile", "build_witness",
    "witness_scan", "gaussian_oracle_value",
]


# -- drift classes -----------------------------------------------------------------

@dataclass
class DriftParam:
    """Piecewise-constant-in-time H^1 drift with diagonal state feedback.

    On interval k the drift value is base[k] + gain[k] * (Y_N + Upsilon_N)
    evaluated at the interval's left endpoint (adapted).  cost =
    (1/2K) sum_k ||Upsilon_dot_k||_{H^1}^2 pathwise.
    """

    grid: SpectralGrid
    N: int
    kind: str
    base: np.ndarray   # (K, L, L, L) complex, Hermitian
    gain: np.ndarray   # (K, L, L, L) real

    @classmethod
    def zero(cls, grid: SpectralGrid, N: int, n_intervals: int, kind: str = "cube"):
        L = grid.n_modes_axis
        return cls(grid, N, kind,
                   np.zeros((n_intervals, L, L, L), dtype=np.complex128),
                   np.zeros((n_intervals, L, L, L)))

    @property
    def n_intervals(self) -> int:
        return self.base.shape[0]

    def mask(self) -> np.ndarray:
        return chi_multiplier(self.grid, self.kind, self.N)

    def udot(self, k: int, v_coeff: np.ndarray) -> np.ndarray:
        m = self.mask()
        return m * (self.base[k] + self.gain[k] * (m * v_coeff))

    def symmetrize(self):
        self.base = 0.5 * (self.base + hermitian_reflect(self.base))
        self.gain = 0.5 * (self.gain + np.real(hermitian_reflect(self.gain + 0j)))


class WitnessDrift:
    """The concentration drift: 2*1_{t>1/2} (-Z_M + sgn(sigma) sqrt(alpha_M) f_M).

    Z_M is the ball-projected path value at t = 1/2, so the drift is adapted;
    Upsilon(1) = -Z_M + sgn(sigma) sqrt(alpha_M) f_M and the cost equals
    ||Upsilon(1)||_{H^1}^2 pathwise.
    """

    def __init__(self, M: int, grid: SpectralGrid, sigma: float, include_bump: bool = True):
        if M > grid.n_grid:
            raise ValueError("witness scale exceeds grid")
        self.M = M
        self.grid = grid
        self.sign = float(np.sign(sigma))
        self.alpha = alpha_m(M)
        self.ball = chi_multiplier(grid, "ball", M)
        self.f_coeff = witness_profile(M, grid).coeff if include_bump else 0.0

    def target(self, y_half_coeff: np.ndarray) -> np.ndarray:
        z = self.ball * y_half_coeff
        return -z + self.sign * math.sqrt(self.alpha) * self.f_coeff


class QuadraticFunctional:
    """F(v) = 0.5 sum_n a(n) |v_hat(n)|^2 for a symmetric multiplier a."""

    def __init__(self, grid: SpectralGrid, mult: np.ndarray):
        self.grid = grid
        self.mult = mult

    @classmethod
    def single_mode(cls, grid: SpectralGrid, n, a: float):
        L = grid.n_modes_axis
        m = np.zeros((L, L, L))
        m[tuple(int(c) % L for c in n)] = a
        nm = tuple(int(-c) % L for c in n)
        m[nm] = a
        return cls(grid, m)

    def value(self, v_coeff: np.ndarray) -> np.ndarray:
        return 0.5 * np.sum(self.mult * np.abs(v_coeff) ** 2, axis=(-3, -2, -1))

    def grad(self, v_coeff: np.ndarray) -> np.ndarray:
        return self.mult * v_coeff

    def oracle(self) -> float:
        """-log E[e^{-F(Y_N(1))}] for the free field, exact by mode independence.

        Every lattice entry contributes half a log (the conjugate pair of a
        complex mode carries two real Gaussian coordinates; the zero mode one).
        """
        v = 1.0 / grid_geometry(self.grid)["bracket2"]
        return float(0.5 * np.sum(np.log1p(self.mult * v)))


def gaussian_oracle_value(a: float, variance: float = 1.0) -> float:
    """-log E[e^{-(a/2) g^2}] = 0.5 log(1 + a var) for scalar Gaussian g."""
    return 0.5 * math.log(1.0 + a * variance)


# -- path simulation ----------------------------------------------------------------

def _h1_sq(coeff, br2):
    return np.sum(br2 * np.abs(coeff) ** 2, axis=(-3, -2, -1))


def _wick_square_integral(y_coeff, chi, sig_n):
    """int :Y_N^2: dx = sum |chi Y_hat|^2 - sigma_N (batched)."""
    return np.sum(np.abs(chi * y_coeff) ** 2, axis=(-3, -2, -1)) - sig_n


class _PathRun:
    """Forward simulation of controlled paths, batched, with optional tape."""

    def __init__(self, p: GibbsParams, grid: SpectralGrid, drift, seed: int,
                 sample_ids, t_steps: int, need_z: bool, tape: bool):
        self.p, self.grid, self.drift, self.seed = p, grid, drift, seed
        self.samples = np.asarray(sample_ids)
        self.t_steps = t_steps
        self.need_z = need_z
        self.tape = tape
        self.K = drift.n_intervals if isinstance(drift, DriftParam) else t_steps
        if t_steps % self.K:
            raise ValueError("t_steps must be a multiple of the drift intervals")
        if t_steps % 2:
            raise ValueError("t_steps must be even (the witness switches at t=1/2)")

    def run(self):
        p, grid = self.p, self.grid
        geom = grid_geometry(grid)
        br2 = geom["bracket2"]
        invbr = br2 ** (-0.5)
        chi = chi_multiplier(grid, p.kind, p.N)
        B = len(self.samples)
        L = grid.n_modes_axis
        dt = 1.0 / self.t_steps
        sub = self.t_steps // self.K
        sig = p.sigma_n
        # criterion is per sample so the draw order never depends on chunking
        self._predraw = grid.mode_count * self.t_steps * 16 <= 1.0e7
        if self._predraw:
            # one batched draw per sample covering its whole path
            self._bank = np.stack([
                _rng.hermitian_unit_normal(
                    grid, _rng.generator(self.seed, _rng.WIENER, sample=int(s)),
                    batch=(self.t_steps,))
                for s in self.samples], axis=1)
        else:
            self._gens = [_rng.generator(self.seed, _rng.WIENER, sample=int(s))
                          for s in self.samples]
        y = np.zeros((B, L, L, L), dtype=np.complex128)
        ups = np.zeros_like(y)
        zacc = np.zeros_like(y) if self.need_z else None
        cost = np.zeros(B)
        y_half = None
        tape_v, tape_udot = ([], []) if self.tape else (None, None)
        udot = np.zeros_like(y)
        P = grid.pad_points(2)
        for j in range(self.t_steps):
            t = j * dt
            if j % sub == 0:
                k = j // sub
                if isinstance(self.drift, DriftParam):
                    v = y + ups
                    udot = self.drift.udot(k, v)
                    if self.tape:
                        tape_v.append(self.drift.mask() * v)
                        tape_udot.append(udot)
                elif isinstance(self.drift, WitnessDrift):
                    udot = (2.0 * self.drift.target(y_half)
                            if t >= 0.5 - 1e-12 else np.zeros_like(y))
                elif self.drift is None:
                    udot = np.zeros_like(y)
                cost += (1.0 / (2.0 * self.K)) * _h1_sq(udot, br2)
            if self.need_z:
                w = dt if 0 < j else 0.5 * dt
                zacc = zacc + w * self._zdot(y, chi, sig, t, P)
            # step the free path and the control
            inc = self._increment(j, B)
            y = y + invbr * inc
            ups = ups + dt * udot
            if self.need_z and j == self.t_steps - 1:
                zacc = zacc + 0.5 * dt * self._zdot(y, chi, sig, 1.0, P)
            if abs((j + 1) * dt - 0.5) < 1e-12:
                y_half = y.copy()
        out = {
            "y1": y, "ups1": ups, "cost": cost, "y_half": y_half,
            "z1": zacc, "tape_v": tape_v, "tape_udot": tape_udot,
        }
        return out

    def _increment(self, j, B):
        dt = 1.0 / self.t_steps
        if self._predraw:
            return self._bank[j] * math.sqrt(dt)
        inc = np.stack([_rng.hermitian_unit_normal(self.grid, g) for g in self._gens])
        return inc * math.sqrt(dt)

    def _zdot(self, y, chi, sig, t, P):
        yn = SpectralField(self.grid, chi * y)
        u = to_physical(yn, P)
        w = from_physical(u * u - t * sig, self.grid).coeff
        return w / grid_geometry(self.grid)["bracket2"]


def _mean_se(vals):
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(len(vals)))


def _gibbs_terms(p: GibbsParams, grid, y1, ups1, z1, cost):
    """The four-term integrand at Theta_N = Upsilon_N + sigma pi_N Z_N."""
    chi = chi_multiplier(grid, p.kind, p.N)
    yn = chi * y1
    theta = chi * ups1 + p.sigma * chi * z1
    P = grid.pad_points(3)
    yp = to_physical(SpectralField(grid, yn), P)
    tp = to_physical(SpectralField(grid, theta), P)
    t1 = -p.sigma * np.mean(yp * tp * tp, axis=(-3, -2, -1))
    t2 = -(p.sigma / 3.0) * np.mean(tp ** 3, axis=(-3, -2, -1))
    w = (_wick_square_integral(y1, chi, p.sigma_n)
         + 2.0 * np.sum(np.real(np.conj(yn) * theta), axis=(-3, -2, -1))
         + np.sum(np.abs(theta) ** 2, axis=(-3, -2, -1)))
    t3 = p.A * np.abs(w) ** p.gamma
    return t1, t2, t3, w


def bd_objective(drift, p: GibbsParams, n_paths: int, seed: int,
                 t_steps: int = 32, functional=None, grid: SpectralGrid | None = None,
                 antithetic: bool = False, sample_offset: int = 0,
                 return_samples: bool = False, chunk: int | None = None):
    """Monte-Carlo value of the variational integrand for a given drift.

    With functional=None this is the Gibbs objective in drift variables
    (every drift gives an upper bound on -log Z_N); a QuadraticFunctional
    switches to the plain form E[F(Y_N(1)+Upsilon_N(1)) + cost].
    Common random numbers: results are a pure function of (seed, offsets).
    """
    grid = grid or SpectralGrid(max(p.N, 1))
    need_z = functional is None and p.sigma != 0.0
    if chunk is None:
        chunk = max(1, int(1.5e6 // grid.mode_count))
    vals = np.empty(n_paths)
    done = 0
    while done < n_paths:
        b = min(chunk, n_paths - done)
        if antithetic:
            # antithetic pairs share a sample id with mirrored increments
            base_ids = np.arange(done, done + (b + 1) // 2) + sample_offset
            run = _PathRun(p, grid, drift, seed, base_ids, t_steps, need_z, tape=False)
            out = _antithetic_run(run, b)
        else:
            ids = np.arange(done, done + b) + sample_offset
            run = _PathRun(p, grid, drift, seed, ids, t_steps, need_z, tape=False)
            out = run.run()
        if functional is not None:
            chi = chi_multiplier(grid, p.kind, p.N)
            v = chi * (out["y1"] + out["ups1"])
            vals[done:done + b] = functional.value(v) + out["cost"]
        else:
            z1 = out["z1"] if out["z1"] is not None else np.zeros_like(out["y1"])
            t1, t2, t3, _ = _gibbs_terms(p, grid, out["y1"], out["ups1"], z1, out["cost"])
            vals[done:done + b] = t1 + t2 + t3 + out["cost"]
        done += b
    mean, se = _mean_se(vals)
    if return_samples:
        return mean, se, vals
    return mean, se


def _antithetic_run(run: _PathRun, B: int):
    """Run a batch where consecutive paths use mirrored increments."""
    base_ids = run.samples
    run_plus = _PathRun(run.p, run.grid, run.drift, run.seed, base_ids,
                        run.t_steps, run.need_z, run.tape)
    out_p = run_plus.run()
    run_minus = _FlippedRun(run.p, run.grid, run.drift, run.seed, base_ids,
                            run.t_steps, run.need_z, run.tape)
    out_m = run_minus.run()
    out = {}
    for key in ("y1", "ups1", "cost", "z1", "y_half"):
        a, b = out_p[key], out_m[key]
        if a is None:
            out[key] = None
        else:
            stacked = np.empty((a.shape[0] * 2,) + a.shape[1:], dtype=a.dtype)
            stacked[0::2], stacked[1::2] = a, b
            out[key] = stacked[:B]
    out["tape_v"] = out["tape_udot"] = None
    return out


class _FlippedRun(_PathRun):
    def _increment(self, j, B):
        return -super()._increment(j, B)


# -- drift optimization ---------------------------------------------------------------

def _objective_grad_field(p, grid, functional, out):
    """Gradient of the terminal term with respect to Upsilon(1), per path."""
    chi = chi_multiplier(grid, p.kind, p.N)
    if functional is not None:
        return chi * functional.grad(chi * (out["y1"] + out["ups1"]))
    z1 = out["z1"] if out["z1"] is not None else np.zeros_like(out["y1"])
    yn = chi * out["y1"]
    theta = chi * out["ups1"] + p.sigma * chi * z1
    P = grid.pad_points(3)
    yp = to_physical(SpectralField(grid, yn), P)
    tp = to_physical(SpectralField(grid, theta), P)
    d1 = from_physical(-p.sigma * (2.0 * yp * tp + tp * tp), grid).coeff
    w = (_wick_square_integral(out["y1"], chi, p.sigma_n)
         + 2.0 * np.sum(np.real(np.conj(yn) * theta), axis=(-3, -2, -1))
         + np.sum(np.abs(theta) ** 2, axis=(-3, -2, -1)))
    pref = (p.A * p.gamma * np.abs(w) ** (p.gamma - 1.0) * np.sign(w))[:, None, None, None]
    d3 = pref * 2.0 * (yn + theta)
    return chi * (d1 + d3)


def drift_gradient(drift: DriftParam, p: GibbsParams, n_paths: int, seed: int,
                   t_steps: int, functional=None, sample_offset: int = 0):
    """Pathwise-averaged analytic gradient of bd_objective in (base, gain)."""
    grid = drift.grid
    geom = grid_geometry(grid)
    br2 = geom["bracket2"]
    need_z = functional is None and p.sigma != 0.0
    K = drift.n_intervals
    dt_k = 1.0 / K
    ids = np.arange(n_paths) + sample_offset
    run = _PathRun(p, grid, drift, seed, ids, t_steps, need_z, tape=True)
    out = run.run()
    lam = _objective_grad_field(p, grid, functional, out)
    gbase = np.zeros_like(drift.base)
    ggain = np.zeros_like(drift.gain)
    mask = drift.mask()
    for k in reversed(range(K)):
        udot_k = out["tape_udot"][k]
        v_k = out["tape_v"][k]
        mu = dt_k * lam + dt_k * br2 * udot_k    # dJ/d(udot_k) as a field
        gbase[k] = np.mean(mu, axis=0) * mask
        ggain[k] = np.mean(np.real(np.conj(mu) * v_k), axis=0) * mask
        lam = lam + drift.gain[k] * mask * mu
    # objective value on the same paths, for the trace
    if functional is not None:
        chi = chi_multiplier(grid, p.kind, p.N)
        vals = functional.value(chi * (out["y1"] + out["ups1"])) + out["cost"]
    else:
        z1 = out["z1"] if out["z1"] is not None else np.zeros_like(out["y1"])
        t1, t2, t3, _ = _gibbs_terms(p, grid, out["y1"], out["ups1"], z1, out["cost"])
        vals = t1 + t2 + t3 + out["cost"]
    return gbase, ggain, _mean_se(vals)


def optimize_drift(p: GibbsParams, n_intervals: int, n_paths: int, iterations: int,
                   seed: int, functional=None, grid: SpectralGrid | None = None,
                   t_steps: int | None = None, lr: float = 0.2, momentum: float = 0.9,
                   eval_paths: int | None = None, use_feedback: bool = True):
    """Momentum SGD on the pathwise gradient; returns (drift, trace, final value).

    The step decays like 1/sqrt(iter), gradients are clipped at 10x a
    running norm, and the returned value is re-evaluated on fresh paths.
    Raises if the smoothed objective exceeds ten times its initial value.
    """
    grid = grid or SpectralGrid(max(p.N, 1))
    if t_steps is None:
        t_steps = n_intervals
    drift = DriftParam.zero(grid, p.N, n_intervals, p.kind)
    vb = np.zeros_like(drift.base)
    vg = np.zeros_like(drift.gain)
    trace = []
    smooth = None
    run_norm = None
    init_val = None
    for it in range(iterations):
        gbase, ggain, (val, _) = drift_gradient(
            drift, p, n_paths, seed, t_steps, functional,
            sample_offset=it * n_paths)
        gnorm = float(np.sqrt(np.sum(np.abs(gbase) ** 2) + np.sum(ggain ** 2)))
        run_norm = gnorm if run_norm is None else 0.9 * run_norm + 0.1 * gnorm
        clip = 10.0 * max(run_norm, 1e-12)
        if gnorm > clip:
            gbase *= clip / gnorm
            ggain *= clip / gnorm
        step = lr / math.sqrt(1.0 + it)
        vb = momentum * vb - step * gbase
        vg = momentum * vg - step * ggain
        drift.base = drift.base + vb
        if use_feedback:
            drift.gain = drift.gain + vg
        drift.symmetrize()
        smooth = val if smooth is None else 0.9 * smooth + 0.1 * val
        if init_val is None:
            init_val = abs(val) + 1.0
        trace.append(smooth)
        if smooth > 10.0 * init_val:
            raise RuntimeError(f"drift optimization diverged at iteration {it}: {trace[-5:]}")
    final = bd_objective(drift, p, eval_paths or 4 * n_paths, seed + 1,
                         t_steps=t_steps, functional=functional, grid=grid)
    return drift, trace, final


# -- witness construction and scan ------------------------------------------------------

def alpha_m(M: int) -> float:
    """E[Z_M(x)^2] = (1/2) sum_{|n|<=M} <n>^{-2}, exact lattice sum."""
    g = SpectralGrid(M)
    geom = grid_geometry(g)
    ball = geom["abs2"] <= M * M
    return float(0.5 * np.sum(ball / geom["bracket2"]))


def _radial_profile(r: np.ndarray) -> np.ndarray:
    """Smoothstep bump supported in (1/2, 1], peaking on [0.65, 0.85]."""
    up = smoothstep((r - 0.52) / 0.13)
    down = 1.0 - smoothstep((r - 0.85) / 0.14)
    return up * down


def witness_profile(M: int, grid: SpectralGrid) -> SpectralField:
    """f_M with radial profile f_hat(n/M), normalized so int f_M^2 dx = 1."""
    geom = grid_geometry(grid)
    prof = _radial_profile(geom["abs"] / M)
    norm = np.sqrt(np.sum(prof ** 2) * M ** (-3))
    coeff = (M ** (-1.5) / norm) * prof
    return SpectralField(grid, coeff.astype(np.complex128))


def witness_moments(M: int, grid: SpectralGrid) -> dict:
    """Exact second-moment diagnostics of the witness ingredients."""
    f = witness_profile(M, grid)
    geom = grid_geometry(grid)
    ball = (geom["abs2"] <= M * M)
    f2 = float(np.sum(np.abs(f.coeff) ** 2))
    P = grid.pad_points(3)
    fp = to_physical(f, P)
    f3 = float(np.mean(fp ** 3))
    var_yf = float(np.sum(np.abs(f.coeff) ** 2 / geom["bracket2"]))       # E(int Y_N f)^2
    var_zf = float(0.5 * np.sum(ball * np.abs(f.coeff) ** 2 / geom["bracket2"]))
    var_z2 = float(0.5 * np.sum(ball / geom["bracket2"] ** 2))            # E(int Z^2 - alpha)^2
    var_yz = float(0.25 * np.sum(ball / geom["bracket2"] ** 2))           # E(int (Y-Z) Z)^2
    return {"f_sq": f2, "f_cubed": f3, "alpha": alpha_m(M),
            "var_yf": var_yf, "var_zf": var_zf, "var_z2": var_z2, "var_yz": var_yz}


def build_witness(M: int, p: GibbsParams, seed: int,
                  grid: SpectralGrid | None = None):
    """Witness drift at scale M plus its exact diagnostics."""
    grid = grid or SpectralGrid(max(p.N, M))
    if p.N < M:
        raise ValueError("witness needs N >= M")
    drift = WitnessDrift(M, grid, p.sigma)
    return drift, witness_moments(M, grid)


def witness_objective(M: int, p: GibbsParams, n_paths: int, seed: int,
                      t_steps: int = 32, antithetic: bool = True):
    grid = SpectralGrid(max(p.N, M))
    drift = WitnessDrift(M, grid, p.sigma)
    return bd_objective(drift, p, n_paths, seed, t_steps=t_steps, grid=grid,
                        antithetic=antithetic)


def witness_scan(sigma_list, M_list, p_base: GibbsParams, n_paths: int, seed: int,
                 t_steps: int = 32) -> dict:
    """Objective vs concentration scale for each coupling; slope of the M^3 fit.

    Uses N = M per point (the objective is uniform in N >= M); common random
    numbers across sigma at fixed M.  Returns rows and per-sigma weighted
    least-squares slopes against M^3 with standard errors.
    """
    rows = []
    fits = {}
    for sig in sigma_list:
        pts = []
        for M in M_list:
            if M > max(p_base.N, M):
                raise ValueError("scan scale exceeds grid")
            p = GibbsParams(sigma=sig, A=p_base.A, gamma=p_base.gamma,
                            N=max(M, 1), kind=p_base.kind)
            mean, se = witness_objective(M, p, n_paths, seed, t_steps=t_steps)
            rows.append({"sigma": sig, "M": M, "objective": mean, "se": se,
                         "n_paths": n_paths, "seed": seed})
            pts.append((M ** 3, mean, se))
        x = np.array([q[0] for q in pts], dtype=float)
        y = np.array([q[1] for q in pts])
        w = 1.0 / np.array([max(q[2], 1e-12) for q in pts]) ** 2
        W = np.diag(w)
        A = np.vstack([x, np.ones_like(x)]).T
        cov = np.linalg.inv(A.T @ W @ A)
        coef = cov @ A.T @ W @ y
        fits[sig] = {"slope": float(coef[0]), "slope_se": float(np.sqrt(cov[0, 0])),
                     "intercept": float(coef[1])}
    return {"rows": rows, "fits": fits}
