"""Stochastic objects of the damped-wave hierarchy and paracontrolled operators.

Builds, from one Wiener path: the stochastic convolution (the linear
object), its Wick square, the once-integrated square, the resonant
product with the linear object, the two-argument kernel implementing the
resonant part of a Duhamel-paraproduct, and the quadratic and quintic
auxiliary processes used by the measure-side analysis.

Dynamics-facing objects are driven by the stochastic convolution; the
measure-facing processes take the Brownian lift Y (mode variance t<n>^{-2})
as input.  The two are never mixed implicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .fields import WickParams, WienerPath, sigma_n, wick_power
from .propagators import StepCoefficients, d_multiplier
from .spectral import (
    SpectralField, SpectralGrid, chi_multiplier, from_physical, grid_geometry,
    lp_multiplier, _lp_cumulative, n_lp_blocks, multiply, paraproduct, project,
    to_physical, zeros,
)

__all__ = [
    "Trajectory", "duhamel", "stochastic_convolution", "build_obj20",
    "build_obj21p", "para_op", "kernel_A", "KernelFamily", "z_process",
    "w_process", "EnhancedDataSet", "build_enhanced_data",
]

_STEP_CACHE: dict = {}


def _steps(grid: SpectralGrid, dt: float) -> StepCoefficients:
    key = (grid.n_grid, round(dt, 14))
    if key not in _STEP_CACHE:
        _STEP_CACHE[key] = StepCoefficients(grid, dt)
    return _STEP_CACHE[key]


@dataclass
class Trajectory:
    """Field-valued path on a uniform time grid; data shape (T, L, L, L)."""

    grid: SpectralGrid
    times: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        if len(self.times) != self.data.shape[0]:
            raise ValueError("time grid and data length differ")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def check_uniform(self):
        d = np.diff(self.times)
        if len(d) == 0 or np.max(np.abs(d - d[0])) > 1e-12 * d[0]:
            raise ValueError("trajectory time grid must be uniform")

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.data[i])

    def map_multiplier(self, mult: np.ndarray) -> "Trajectory":
        return Trajectory(self.grid, self.times.copy(), self.data * mult)

    def project(self, kind: str, N: int) -> "Trajectory":
        return self.map_multiplier(chi_multiplier(self.grid, kind, N))


def duhamel(F: Trajectory, return_velocity: bool = False):
    """I(F)(t) = int_0^t D(t-s) F(s) ds, exact for piecewise-linear F."""
    F.check_uniform()
    sc = _steps(F.grid, F.dt)
    T = F.data.shape[0]
    out = np.zeros_like(F.data)
    vel = np.zeros_like(F.data) if return_velocity else None
    pos = np.zeros_like(F.data[0])
    v = np.zeros_like(F.data[0])
    for j in range(T - 1):
        hp, hv = sc.homogeneous(pos, v)
        pp, pv = sc.particular(F.data[j], F.data[j + 1])
        pos, v = hp + pp, hv + pv
        out[j + 1] = pos
        if return_velocity:
            vel[j + 1] = v
    traj = Trajectory(F.grid, F.times.copy(), out)
    if return_velocity:
        return traj, Trajectory(F.grid, F.times.copy(), vel)
    return traj


def stochastic_convolution(pair, path: WienerPath, return_velocity: bool = False):
    """Solution of the linear stochastic damped wave equation along the path.

    The per-mode update is the exact Gaussian transition conditioned on the
    path's increments (no discretization bias in law); `pair` is an initial
    (position, velocity) pair of SpectralFields or None for zero data.
    """
    grid = path.grid
    sc = _steps(grid, path.dt)
    T = len(path.times)
    L = grid.n_modes_axis
    dtype = path.increments.dtype
    pos = np.zeros((L, L, L), dtype=dtype)
    vel = np.zeros((L, L, L), dtype=dtype)
    if pair is not None:
        f, g = pair
        pos = pos + f.coeff.astype(dtype, copy=False)
        vel = vel + g.coeff.astype(dtype, copy=False)
    out = np.zeros((T, L, L, L), dtype=dtype)
    velout = np.zeros((T, L, L, L), dtype=dtype) if return_velocity else None
    out[0] = pos
    if return_velocity:
        velout[0] = vel
    gen = _rng.generator(path.seed, _rng.WIENER_AUX, sample=path.sample)
    for j in range(T - 1):
        zeta = _rng.hermitian_unit_normal(grid, gen, batch=(2,), dtype=dtype)
        hp, hv = sc.homogeneous(pos, vel)
        n1, n2 = sc.noise_from_increment(path.increments[j], zeta[0], zeta[1])
        pos, vel = hp + n1, hv + n2
        out[j + 1] = pos
        if return_velocity:
            velout[j + 1] = vel
    traj = Trajectory(grid, path.times.copy(), out)
    if return_velocity:
        return traj, Trajectory(grid, path.times.copy(), velout)
    return traj


def _chunked_physical_map(traj_data, grid, func, degree, chunk=16):
    """Apply a pointwise physical-space map slicewise over the time axis."""
    P = grid.pad_points(degree)
    T = traj_data.shape[0]
    out = np.empty_like(traj_data)
    for i in range(0, T, chunk):
        f = SpectralField(grid, traj_data[i:i + chunk])
        u = to_physical(f, P)
        out[i:i + chunk] = from_physical(func(u, slice(i, min(i + chunk, T))), grid).coeff
    return out


def build_obj20(psi: Trajectory, N: int, kind: str = "cube",
                return_wick: bool = False, return_velocity: bool = False):
    """Duhamel integral of the Wick square of the projected linear object.

    The Wick constant is the stationary point variance sigma_N, constant in
    time (the linear object is stationary under Gaussian-pair data).
    """
    psi_n = psi.project(kind, N)
    sig = sigma_n(N, kind)
    sq = _chunked_physical_map(psi_n.data, psi.grid, lambda u, _: u * u - sig, 2)
    wick2 = Trajectory(psi.grid, psi.times.copy(), sq)
    res = duhamel(wick2, return_velocity=return_velocity)
    if return_velocity:
        obj, vel = res
        obj = obj.project(kind, N)
        vel = vel.project(kind, N)
        return (obj, vel, wick2) if return_wick else (obj, vel)
    obj = res.project(kind, N)
    return (obj, wick2) if return_wick else obj


def build_obj21p(obj20: Trajectory, psi: Trajectory, N: int, kind: str = "cube") -> Trajectory:
    """Resonant product of the integrated square with the linear object, per slice."""
    if obj20.data.shape[0] != psi.data.shape[0]:
        raise ValueError("trajectories must share a time grid")
    psi_n = psi.project(kind, N)
    a = SpectralField(obj20.grid, obj20.data)
    b = SpectralField(psi.grid, psi_n.data)
    out = paraproduct(a, b, "res")
    return Trajectory(obj20.grid, obj20.times.copy(), out.coeff)


def _band_multiplier(grid: SpectralGrid, k: int, theta: float, c0: float):
    """sum of LP multipliers phi_j over theta*k + c0 <= j < k-2 (low factor)."""
    j_lo = int(math.ceil(theta * k + c0))
    j_hi = k - 3
    if j_hi < j_lo:
        return None
    return _lp_cumulative(grid, j_hi) - _lp_cumulative(grid, j_lo - 1)


def _filtered_paraproduct(w: SpectralField, psi: SpectralField, theta, c0, which):
    """Paraproduct sum_{j<k-2} P_j w P_k psi restricted by the theta condition.

    which="one" keeps theta*k + c0 <= j < k-2, which="two" keeps j < theta*k + c0.
    """
    grid = w.grid
    J = n_lp_blocks(grid)
    acc = None
    for k in range(3, J):
        full = _lp_cumulative(grid, k - 3)
        band = _band_multiplier(grid, k, theta, c0)
        if which == "one":
            mult = band
        else:
            mult = full if band is None else full - band
        if mult is None:
            continue
        a = SpectralField(grid, w.coeff * mult)
        b = SpectralField(grid, psi.coeff * lp_multiplier(grid, k))
        term = multiply(a, b)
        acc = term.coeff if acc is None else acc + term.coeff
    if acc is None:
        acc = np.zeros(np.broadcast_shapes(w.coeff.shape, psi.coeff.shape), dtype=w.coeff.dtype)
    return SpectralField(grid, acc)


def para_op(kind: str, w: Trajectory, psi: Trajectory, N: int, theta: float = 0.1,
            c0: float = 0.0, proj_kind: str = "cube"):
    """Paracontrolled Duhamel operators built on the linear object.

    kind="lo":     I(w paraproduct psi_N) (full low-high paraproduct under Duhamel)
    kind="one":    restriction to the band |n2|^theta <~ |n1| << |n2|
                   (blocks theta*k + c0 <= j < k-2), still under Duhamel
    kind="two":    the complementary pre-resonant part, so lo = one + two exactly
    kind="lowres": the resonant product of the "two" part with psi_N per slice
    """
    if not (0.0 < theta < 1.0):
        raise ValueError("theta must lie in (0,1)")
    if kind not in ("lo", "one", "two", "lowres"):
        raise ValueError("kind must be lo, one, two or lowres")
    if w.data.shape[0] != psi.data.shape[0]:
        raise ValueError("trajectories must share a time grid")
    psi_n = psi.project(proj_kind, N)
    wf = SpectralField(w.grid, w.data)
    pf = SpectralField(psi.grid, psi_n.data)
    if kind == "lo":
        forced = paraproduct(wf, pf, "lo")
    elif kind == "one":
        forced = _filtered_paraproduct(wf, pf, theta, c0, "one")
    else:
        forced = _filtered_paraproduct(wf, pf, theta, c0, "two")
    ftraj = Trajectory(w.grid, w.times.copy(), forced.coeff)
    integrated = duhamel(ftraj)
    if kind != "lowres":
        return integrated
    a = SpectralField(w.grid, integrated.data)
    res = paraproduct(a, pf, "res")
    return Trajectory(w.grid, w.times.copy(), res.coeff)


@dataclass
class KernelFamily:
    """The two-time resonant kernel A(t, t'), t >= t', on a coarse grid.

    A(t,t') is the resonant product of the half-propagated slice
    D(t-t') psi_N(t') with psi_N(t); contraction against a scalar time
    series realizes the resonant part of I(m psi_N) resonant psi_N.
    """

    grid: SpectralGrid
    times: np.ndarray
    data: np.ndarray  # (T, T, L, L, L); zero for t < t'

    def field(self, i: int, j: int) -> SpectralField:
        if self.times[i] < self.times[j]:
            raise ValueError("kernel defined for t >= t'")
        return SpectralField(self.grid, self.data[i, j])

    def contract(self, series: np.ndarray) -> Trajectory:
        """trapezoid_{t' <= t} series(t') A(t, t') dt' as a trajectory in t."""
        T = len(self.times)
        L = self.grid.n_modes_axis
        out = np.zeros((T, L, L, L), dtype=self.data.dtype)
        for i in range(1, T):
            ts = self.times[: i + 1]
            w = np.zeros(i + 1)
            w[1:] += 0.5 * np.diff(ts)
            w[:-1] += 0.5 * np.diff(ts)
            out[i] = np.tensordot(w * series[: i + 1], self.data[i, : i + 1], axes=(0, 0))
        return Trajectory(self.grid, self.times.copy(), out)

    def sup_l3_h_norm(self, eps: float = 0.05) -> float:
        """Grid max over t' of the L^3-in-t norm of the H^{-eps} kernel size."""
        from .spectral import sobolev_norm
        T = len(self.times)
        best = 0.0
        for j in range(T):
            if T - j < 2:
                continue
            vals = np.array([sobolev_norm(self.field(i, j), -eps) ** 3
                             for i in range(j, T)])
            best = max(best, float(np.trapz(vals, self.times[j:])) ** (1.0 / 3.0))
        return best


def kernel_A(psi: Trajectory, N: int, t_grid, kind: str = "cube") -> KernelFamily:
    """Assemble A(t, t') on a sub-grid of the trajectory's times."""
    t_grid = np.asarray(t_grid, dtype=np.float64)
    idx = []
    for t in t_grid:
        j = int(np.argmin(np.abs(psi.times - t)))
        if abs(psi.times[j] - t) > 1e-10:
            raise ValueError("kernel times must lie on the trajectory grid")
        idx.append(j)
    psi_n = psi.project(kind, N)
    T = len(t_grid)
    L = psi.grid.n_modes_axis
    data = np.zeros((T, T, L, L, L), dtype=psi.data.dtype)
    for a in range(T):
        for b in range(a + 1):
            tau = t_grid[a] - t_grid[b]
            half = SpectralField(psi.grid, d_multiplier(psi.grid, tau) * psi_n.data[idx[b]])
            cur = SpectralField(psi.grid, psi_n.data[idx[a]])
            data[a, b] = paraproduct(half, cur, "res").coeff
    return KernelFamily(psi.grid, t_grid, data)


def z_process(y: Trajectory, N: int, kind: str = "cube", project_result: bool = True):
    """Quadratic process: (1-Delta)^{-1} of the time-scaled Wick square of Y_N.

    Returns (zdot, Z) where Z is the cumulative trapezoidal time integral.
    The Wick variance at time t is t*sigma_N (Brownian scaling of Y).
    """
    y_n = y.project(kind, N)
    sig = sigma_n(N, kind)
    tcol = y.times

    def center(u, sl):
        return u * u - (tcol[sl] * sig)[:, None, None, None]

    sq = _chunked_physical_map(y_n.data, y.grid, center, 2)
    inv = 1.0 / grid_geometry(y.grid)["bracket2"]
    zdot_data = sq * inv
    if project_result:
        zdot_data = zdot_data * chi_multiplier(y.grid, kind, N)
    zdot = Trajectory(y.grid, y.times.copy(), zdot_data)
    Z = np.zeros_like(zdot_data)
    dt = np.diff(y.times)
    for j in range(1, len(y.times)):
        Z[j] = Z[j - 1] + 0.5 * dt[j - 1] * (zdot_data[j - 1] + zdot_data[j])
    return zdot, Trajectory(y.grid, y.times.copy(), Z)


def w_process(y: Trajectory, N: int, eps: float = 0.05, kind: str = "cube") -> Trajectory:
    """Quintic coercive process: smoothed fifth power under (1-Delta)^{-1} pi_N."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    grid = y.grid
    br2 = grid_geometry(grid)["bracket2"]
    smooth = br2 ** (-(0.5 + eps) / 2.0)
    y_n = y.project(kind, N).map_multiplier(smooth)
    quint = _chunked_physical_map(y_n.data, grid, lambda u, _: u ** 5, 5, chunk=4)
    mult = smooth / br2 * chi_multiplier(grid, kind, N)
    wdot = quint * mult
    out = np.zeros_like(wdot)
    dt = np.diff(y.times)
    for j in range(1, len(y.times)):
        out[j] = out[j - 1] + 0.5 * dt[j - 1] * (wdot[j - 1] + wdot[j])
    return Trajectory(grid, y.times.copy(), out)


@dataclass
class EnhancedDataSet:
    """The truncated enhanced data set built from one path and one seed."""

    N: int
    kind: str
    theta: float
    c0: float
    seed: int
    psi: Trajectory
    psi_vel: Trajectory
    wick2: Trajectory
    obj20: Trajectory
    obj20_vel: Trajectory
    obj21p: Trajectory
    kernel: KernelFamily

    def apply_j_one(self, w: Trajectory) -> Trajectory:
        """Deterministic part of the paracontrolled operator on w."""
        return para_op("one", w, self.psi, self.N, self.theta, self.c0, self.kind)

    def apply_j_lowres(self, w: Trajectory) -> Trajectory:
        """Random resonant part of the paracontrolled operator on w."""
        return para_op("lowres", w, self.psi, self.N, self.theta, self.c0, self.kind)

    def norms(self, eps: float = 0.05) -> dict:
        from .spectral import sobolev_norm, w_inf_norm
        sup = lambda tr, s: float(np.max(w_inf_norm(SpectralField(tr.grid, tr.data), s)))
        suph = lambda tr, s: float(np.max(sobolev_norm(SpectralField(tr.grid, tr.data), s)))
        return {
            "psi_Winf": sup(self.psi, -0.5 - eps),
            "psi_vel_Winf": sup(self.psi_vel, -1.5 - eps),
            "wick2_Winf": sup(self.wick2, -1.0 - eps),
            "obj20_Winf": sup(self.obj20, 0.5 - eps),
            "obj20_vel_Winf": sup(self.obj20_vel, -1.0 - eps),
            "obj21p_H": suph(self.obj21p, -eps),
            "kernelA_LinfL3H": self.kernel.sup_l3_h_norm(eps),
        }


def build_enhanced_data(grid: SpectralGrid, N: int, seed: int, n_steps: int = 32,
                        T: float = 1.0, kind: str = "cube", theta: float = 0.1,
                        c0: float = 0.0, kernel_times: int = 9, sample: int = 0,
                        stationary: bool = True) -> EnhancedDataSet:
    """Sample a Wiener path and assemble the full enhanced data set."""
    from .fields import sample_mu_s, sample_wiener_path
    times = np.linspace(0.0, T, n_steps + 1)
    path = sample_wiener_path(grid, times, seed, sample=sample)
    pair = None
    if stationary:
        u = sample_mu_s(grid, 1.0, seed, sample=sample, stream=_rng.INIT)
        v = sample_mu_s(grid, 0.0, seed, sample=sample + (1 << 32), stream=_rng.INIT)
        pair = (u, v)
    psi, psi_vel = stochastic_convolution(pair, path, return_velocity=True)
    obj20, obj20_vel, wick2 = build_obj20(psi, N, kind, return_wick=True,
                                          return_velocity=True)
    obj21p = build_obj21p(obj20, psi, N, kind)
    snap_idx = np.unique(np.round(np.linspace(0, n_steps, kernel_times)).astype(int))
    kern = kernel_A(psi, N, times[snap_idx], kind)
    return EnhancedDataSet(N, kind, theta, c0, seed, psi, psi_vel, wick2,
                           obj20, obj20_vel, obj21p, kern)
