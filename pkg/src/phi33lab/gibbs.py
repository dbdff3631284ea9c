"""Truncated renormalized Gibbs measure: potential, constants, sampler.

The measure has density exp(-R_N(u) - alpha_N) against the free field,

    R_N(u) = -(sigma/3) int :u_N^3: + A | int :u_N^2: |^gamma,

with u_N the projected field and alpha_N the second renormalization
constant removing the divergent drift-field coupling energy.  Sampling is
Metropolis-adjusted Langevin on the band-limited mode vector (exact
stationary law at finite N); unadjusted parabolic stepping is kept as a
burn-in/proposal mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import rng as _rng
from .fields import WickParams, sigma_n, wick_power, wick_square_pair_sum
from .objects import Trajectory
from .spectral import (
    SpectralField, SpectralGrid, a_norm, chi_multiplier, grid_geometry,
    project, sobolev_norm, to_physical, zeros,
)

__all__ = [
    "GibbsParams", "potential_r", "alpha_n", "r_diamond", "taming_m",
    "grad_energy", "energy", "MalaSampler", "sample_rho_mala", "tame_weight",
    "tamed_ratio_estimate", "singularity_observable", "shifted_drift_solve",
    "embed_with_free_modes",
]

_ALPHA_CACHE: dict = {}


@dataclass
class GibbsParams:
    sigma: float = 0.1
    A: float = 10.0
    gamma: float = 3.0
    N: int = 2
    kind: str = "cube"

    def __post_init__(self):
        if self.A < 0 or self.gamma < 1:
            raise ValueError("need A >= 0 and gamma >= 1")
        self.sigma_n = sigma_n(self.N, self.kind)

    @property
    def wick(self) -> WickParams:
        return WickParams(self.N, self.kind, self.sigma_n)


def alpha_n(p: GibbsParams) -> float:
    """Second renormalization constant (sigma^2/2) E int_0^1 ||Zdot_N||_{H^1}^2 dt.

    Closed pair sum: (sigma^2/3) sum_n chi_N^2(n) <n>^{-2} P_N(n) with
    P_N(n) = sum_{n=n1+n2} chi^2 chi^2 <n1>^{-2} <n2>^{-2}; the Wick
    centering makes the n=0 term obey the same doubled-pairing formula.
    """
    key = (p.N, p.kind)
    if key not in _ALPHA_CACHE:
        _ALPHA_CACHE[key] = wick_square_pair_sum(p.N, p.kind, weight="zdot-H1") / 6.0
    return p.sigma ** 2 * _ALPHA_CACHE[key]


def _wick_integrals(u: SpectralField, p: GibbsParams):
    """(int :u_N^2: dx, int :u_N^3: dx), batched."""
    un = project(u, p.kind, p.N)
    w2 = np.sum(np.abs(un.coeff) ** 2, axis=(-3, -2, -1)) - p.sigma_n
    phys = to_physical(un, un.grid.pad_points(3))
    mean_u = np.real(un.coeff[..., 0, 0, 0])
    w3 = np.mean(phys ** 3, axis=(-3, -2, -1)) - 3.0 * p.sigma_n * mean_u
    return w2, w3


def potential_r(u: SpectralField, p: GibbsParams):
    """R_N(u); batched over leading axes of u."""
    w2, w3 = _wick_integrals(u, p)
    return -(p.sigma / 3.0) * w3 + p.A * np.abs(w2) ** p.gamma


def r_diamond(u: SpectralField, p: GibbsParams):
    return potential_r(u, p) + alpha_n(p)


def taming_m(w, A: float):
    """M(w) = 6 A |w| w, the taming drift coefficient."""
    return 6.0 * A * np.abs(w) * w


def energy(u: SpectralField, p: GibbsParams):
    """E_N(u) = 0.5 ||u||_{H^1}^2 + R_N^diamond(u); the sampler's log-density is -E."""
    return 0.5 * sobolev_norm(u, 1.0) ** 2 + r_diamond(u, p)


def grad_energy(u: SpectralField, p: GibbsParams) -> SpectralField:
    """L^2 gradient of the energy: (1-Delta)u - sigma pi_N :u_N^2: + taming term."""
    geom = grid_geometry(u.grid)
    out = u.coeff * geom["bracket2"]
    un = project(u, p.kind, p.N)
    w2 = np.sum(np.abs(un.coeff) ** 2, axis=(-3, -2, -1)) - p.sigma_n
    wick2 = wick_power(un, 2, p.wick)
    coupling = p.gamma * p.A * np.abs(w2) ** (p.gamma - 1.0) * np.sign(w2)
    nl = -p.sigma * wick2.coeff + 2.0 * np.asarray(coupling)[..., None, None, None] * un.coeff
    chi = chi_multiplier(u.grid, p.kind, p.N)
    return SpectralField(u.grid, out + chi * nl)


# -- sampler ----------------------------------------------------------------------

def _l2sq(c):
    return np.sum(np.abs(c) ** 2, axis=(-3, -2, -1))


class MalaSampler:
    """Metropolis-adjusted Langevin chains on the band-limited mode vector.

    Proposals u' = u - step*gradE(u) + sqrt(2*step)*xi with white-noise xi;
    `adjusted=False` gives the unadjusted parabolic (stochastic heat) step
    used for burn-in.  Several chains run as one batch; every draw is
    keyed by (seed, stream, iteration) so runs are reproducible.
    """

    def __init__(self, p: GibbsParams, step: float, seed: int, n_chains: int = 1,
                 grid: SpectralGrid | None = None, guard_n: int = 8):
        if p.N > guard_n:
            raise ValueError(f"mode count at N={p.N} exceeds the sampler guard")
        self.p = p
        self.step = float(step)
        self.seed = seed
        self.n_chains = n_chains
        self.grid = grid or SpectralGrid(p.N)
        self.iteration = 0
        self.accepted = 0
        self.proposed = 0
        u0 = zeros(self.grid, batch=(n_chains,))
        self.u = u0.coeff
        self.energy_val = energy(u0, p)
        self.grad = grad_energy(u0, p).coeff

    def state(self) -> SpectralField:
        return SpectralField(self.grid, self.u.copy())

    def sweep(self, n_iter: int, adjusted: bool = True, record=None):
        p, tau = self.p, self.step
        for _ in range(n_iter):
            gen = _rng.generator(self.seed, _rng.MALA, step=self.iteration)
            xi = _rng.hermitian_unit_normal(self.grid, gen, batch=(self.n_chains,))
            prop = self.u - tau * self.grad + np.sqrt(2.0 * tau) * xi
            pf = SpectralField(self.grid, prop)
            e_new = energy(pf, p)
            if np.any(~np.isfinite(e_new)):
                raise FloatingPointError("energy overflow in sampler proposal")
            if adjusted:
                g_new = grad_energy(pf, p).coeff
                fwd = _l2sq(prop - self.u + tau * self.grad)
                bwd = _l2sq(self.u - prop + tau * g_new)
                log_alpha = (self.energy_val - e_new) + (fwd - bwd) / (4.0 * tau)
                ugen = _rng.generator(self.seed, _rng.MALA_ACCEPT, step=self.iteration)
                accept = np.log(ugen.random(self.n_chains)) < log_alpha
                self.accepted += int(np.sum(accept))
                self.proposed += self.n_chains
                acc = accept[:, None, None, None]
                self.u = np.where(acc, prop, self.u)
                self.energy_val = np.where(accept, e_new, self.energy_val)
                self.grad = np.where(acc, g_new, self.grad)
            else:
                self.u = prop
                self.energy_val = e_new
                self.grad = grad_energy(pf, p).coeff
            self.iteration += 1
            if record is not None:
                record(self)

    def acceptance_rate(self) -> float:
        return self.accepted / max(self.proposed, 1)


def integrated_autocorrelation(series: np.ndarray, c: float = 6.0) -> float:
    """Sokal's windowed IAT estimate for a scalar chain."""
    x = np.asarray(series, dtype=np.float64)
    x = x - x.mean()
    n = len(x)
    if n < 8 or np.allclose(x, 0):
        return 1.0
    acf = np.correlate(x, x, mode="full")[n - 1:] / (np.arange(n, 0, -1) * x.var())
    tau = 1.0
    for m in range(1, n):
        tau = 1.0 + 2.0 * np.sum(acf[1:m + 1])
        if m >= c * tau:
            break
    return max(tau, 1.0)


def sample_rho_mala(p: GibbsParams, n_samples: int, seed: int, step: float = 0.02,
                    n_chains: int = 16, burn: int = 500, thin: int = 10,
                    tune: bool = True, guard_n: int = 8):
    """Draw approximately independent samples of the truncated Gibbs measure.

    Returns (fields, info): `fields` a batched SpectralField on the N-grid,
    `info` with acceptance rate and the integrated autocorrelation time of
    int :u^2: dx.  Raises if acceptance collapses below 1%.
    """
    sampler = MalaSampler(p, step, seed, n_chains=n_chains, guard_n=guard_n)
    sampler.sweep(burn // 2, adjusted=False)     # parabolic pre-burn
    if tune:
        for _ in range(8):
            before = (sampler.accepted, sampler.proposed)
            sampler.sweep(40)
            rate = (sampler.accepted - before[0]) / max(sampler.proposed - before[1], 1)
            if rate < 0.45:
                sampler.step *= 0.7
            elif rate > 0.70:
                sampler.step *= 1.3
    sampler.accepted = sampler.proposed = 0
    sampler.sweep(burn)
    need = int(np.ceil(n_samples / n_chains))
    L = sampler.grid.n_modes_axis
    out = np.empty((need, n_chains, L, L, L), dtype=np.complex128)
    trace = np.empty((need, n_chains))
    for i in range(need):
        sampler.sweep(thin)
        out[i] = sampler.u
        un = project(SpectralField(sampler.grid, sampler.u), p.kind, p.N)
        trace[i] = np.sum(np.abs(un.coeff) ** 2, axis=(-3, -2, -1)) - p.sigma_n
    rate = sampler.acceptance_rate()
    if rate < 0.01:
        raise RuntimeError("step too large: acceptance below 1%")
    iat = float(np.mean([integrated_autocorrelation(trace[:, c]) for c in range(n_chains)]))
    fields = SpectralField(sampler.grid, out.reshape(need * n_chains, L, L, L)[:n_samples])
    return fields, {"acceptance": rate, "iat_wick2": iat, "step": sampler.step}


def embed_with_free_modes(u: SpectralField, target: SpectralGrid, seed: int,
                          sample: int = 0) -> SpectralField:
    """Extend a band-limited Gibbs sample with exact free-field high modes."""
    from .fields import sample_mu_s
    big = sample_mu_s(target, 1.0, seed, sample=sample, stream=_rng.INIT)
    L, G = target.n_modes_axis, u.grid.n_grid
    src = np.fft.fftfreq(u.grid.n_modes_axis, 1.0 / u.grid.n_modes_axis).astype(np.int64)
    dst = src % L
    coeff = big.coeff.copy()
    coeff[..., dst[:, None, None], dst[None, :, None], dst[None, None, :]] = u.coeff
    return SpectralField(target, coeff)


# -- taming and singularity diagnostics --------------------------------------------

def tame_weight(u: SpectralField, p: GibbsParams, delta: float):
    """Importance weight exp(-delta ||u_N||_A^20) of the tamed measure vs rho_N."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    un = project(u, p.kind, p.N)
    return np.exp(-delta * a_norm(un) ** 20)


def tamed_ratio_estimate(samples: SpectralField, p: GibbsParams, delta: float):
    """MC estimate of Z_{N,delta}/Z_N over rho_N samples: (mean weight, s.e.)."""
    w = np.atleast_1d(tame_weight(samples, p, delta))
    return float(np.mean(w)), float(np.std(w, ddof=1) / np.sqrt(len(w)))


def singularity_observable(u: SpectralField, p: GibbsParams):
    """(log N)^{-3/4} R_N(u), the scaled-potential observable."""
    if p.N < 2:
        raise ValueError("observable needs N >= 2")
    return np.log(p.N) ** (-0.75) * potential_r(u, p)


# -- shifted-measure drift ODE ------------------------------------------------------

def _w_dot(v_coeff, grid, N, kind, eps):
    """Time-slice derivative of the quintic coercive process at state v."""
    br2 = grid_geometry(grid)["bracket2"]
    smooth = br2 ** (-(0.5 + eps) / 2.0)
    chi = chi_multiplier(grid, kind, N)
    f = SpectralField(grid, v_coeff * chi * smooth)
    P = grid.pad_points(5)
    u = to_physical(f, P)
    from .spectral import from_physical
    quint = from_physical(u ** 5, grid)
    return quint.coeff * (smooth / br2 * chi)


def shifted_drift_solve(Y: Trajectory, upsilon_dot, p: GibbsParams, eps: float = 0.05,
                        guard: float | None = None, include_quintic: bool = True):
    """Integrate the drift equation

        Theta' + sigma (1-Delta)^{-1} pi_N (2 Theta_N Y_N + Theta_N^2)
               + Wdot_N(Y + Theta) - Upsilon' = 0,   Theta(0) = 0,

    with Heun's method (order 2).  `upsilon_dot` may be None, a Trajectory
    on Y's grid, or a callable t -> SpectralField.  Returns (Theta
    trajectory, sup_t ||Theta||_{H^1}, blown) where `blown` flags the
    a-priori-bound guard.
    """
    Y.check_uniform()
    grid = Y.grid
    chi = chi_multiplier(grid, p.kind, p.N)
    inv = 1.0 / grid_geometry(grid)["bracket2"]

    def up_dot(j):
        if upsilon_dot is None:
            return 0.0
        if isinstance(upsilon_dot, Trajectory):
            return upsilon_dot.data[j]
        return upsilon_dot(Y.times[j]).coeff

    from .spectral import multiply

    def rhs(j, th):
        f = SpectralField(grid, th * chi)
        g = SpectralField(grid, Y.data[j] * chi)
        prod = 2.0 * multiply(f, g).coeff + multiply(f, f).coeff
        out = -p.sigma * inv * chi * prod
        if include_quintic:
            out = out - _w_dot(Y.data[j] + th, grid, p.N, p.kind, eps)
        return out + up_dot(j)

    T = Y.data.shape[0]
    dt = Y.dt
    out = np.zeros_like(Y.data)
    th = np.zeros_like(Y.data[0])
    sup = 0.0
    cost = 0.0
    if isinstance(upsilon_dot, Trajectory):
        br2 = grid_geometry(grid)["bracket2"]
        cost = float(np.sum(br2 * np.mean(np.abs(upsilon_dot.data) ** 2, axis=0)))
    ynorm = float(np.max(np.sum(np.abs(Y.data * chi) ** 2, axis=(-3, -2, -1))))
    bound = guard if guard is not None else 10.0 * 5.0 * (cost + ynorm + 1.0)
    blown = False
    for j in range(T - 1):
        k1 = rhs(j, th)
        k2 = rhs(j + 1, th + dt * k1)
        th = th + 0.5 * dt * (k1 + k2)
        out[j + 1] = th
        h1 = float(sobolev_norm(SpectralField(grid, th), 1.0))
        sup = max(sup, h1)
        if h1 * h1 > bound:
            blown = True
            break
    return Trajectory(grid, Y.times.copy(), out), sup, blown
