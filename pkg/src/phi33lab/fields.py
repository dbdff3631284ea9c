"""Gaussian measures, the cylindrical Wiener process, and Wick powers.

The measure mu_s has independent mode coefficients with E|u_hat(n)|^2 =
<n>^{-2s}; s=1 is the massive free field, s=0 white noise.  Wick powers
of a band-limited field subtract the point variance sigma_N =
sum_n chi_N^2(n) <n>^{-2} through Hermite polynomials evaluated on the
dealiased physical grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .spectral import (
    SpectralGrid, SpectralField, chi_multiplier, grid_geometry, from_physical,
    to_physical, project,
)

__all__ = [
    "sample_mu_s", "sigma_n", "hermite", "WickParams", "wick_power",
    "WienerPath", "sample_wiener_path", "y_process", "wick_pair_covariance_check",
    "pair_convolution", "wick_square_pair_sum",
]


def sample_mu_s(grid: SpectralGrid, s: float, seed: int, sample: int = 0,
                stream: int = _rng.MU, batch=(), dtype=np.complex128) -> SpectralField:
    """Draw u ~ mu_s on the grid: E|u_hat(n)|^2 = <n>^{-2s}, Hermitian-paired."""
    gen = _rng.generator(seed, stream, sample=sample)
    z = _rng.hermitian_unit_normal(grid, gen, batch=batch, dtype=dtype)
    w = grid_geometry(grid)["bracket2"] ** (-s / 2.0)
    return SpectralField(grid, z * w.astype(z.real.dtype))


def _chi_sq_lattice(N: int, kind: str):
    """chi_N(n)^2 and <n>^2 on the (2N+1)^3 lattice holding the support."""
    grid = SpectralGrid(N)
    chi = chi_multiplier(grid, kind, N)
    return chi * chi, grid_geometry(grid)["bracket2"]


def sigma_n(N: int, kind: str = "cube") -> float:
    """Point variance of the truncated free field: sum chi_N^2(n)/<n>^2."""
    if N < 1:
        raise ValueError("N must be >= 1")
    chi2, br2 = _chi_sq_lattice(N, kind)
    return float(np.sum(chi2 / br2))


def hermite(k: int, x, sigma: float):
    """Hermite polynomials H_k(x; sigma), k <= 3, generating e^{tx - sigma t^2/2}."""
    if sigma < 0:
        raise ValueError("variance parameter must be >= 0")
    if k == 0:
        return np.ones_like(np.asarray(x, dtype=float)) if np.ndim(x) else 1.0
    if k == 1:
        return x
    if k == 2:
        return x * x - sigma
    if k == 3:
        return x * x * x - 3.0 * sigma * x
    raise ValueError("only degrees 0..3 are defined")


@dataclass(frozen=True)
class WickParams:
    N: int
    kind: str = "cube"
    sigma_n: float | None = None

    def variance(self) -> float:
        return sigma_n(self.N, self.kind) if self.sigma_n is None else self.sigma_n


def _check_band_limit(f: SpectralField, params: WickParams):
    chi = chi_multiplier(f.grid, params.kind, min(params.N, f.grid.n_grid))
    if params.N > f.grid.n_grid:
        # support cannot exceed the grid; modes above n_grid are absent anyway
        chi = chi_multiplier(f.grid, params.kind, f.grid.n_grid)
    outside = np.abs(f.coeff) * (chi == 0)
    scale = max(float(np.max(np.abs(f.coeff))), 1e-300)
    if np.max(outside) > 1e-8 * scale:
        raise ValueError("field is not band-limited to the Wick parameters")


def wick_power(f: SpectralField, k: int, params: WickParams,
               variance: float | None = None) -> SpectralField:
    """:f^k: = H_k(f; sigma) on the dealiased physical grid, k in {2, 3}.

    The variance defaults to params' sigma_N; pass `variance` for
    time-scaled Wick powers (e.g. t*sigma_N along a Brownian lift).
    """
    if k not in (2, 3):
        raise ValueError("Wick powers implemented for k in {2, 3}")
    _check_band_limit(f, params)
    sig = params.variance() if variance is None else variance
    P = f.grid.pad_points(k)
    u = to_physical(f, P)
    return from_physical(hermite(k, u, sig), f.grid)


# -- cylindrical Wiener process --------------------------------------------------

@dataclass
class WienerPath:
    """Per-mode Brownian increments on a uniform time grid.

    increments[j] is B(t_{j+1}) - B(t_j) as a Hermitian complex array with
    E|dB(n)|^2 = dt.  seed/sample key the auxiliary streams used by exact
    linear-SDE updates so that coupled objects are reproducible.
    """

    grid: SpectralGrid
    times: np.ndarray
    increments: np.ndarray
    seed: int
    sample: int = 0

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def n_steps(self) -> int:
        return len(self.times) - 1


def sample_wiener_path(grid: SpectralGrid, t_grid, seed: int, sample: int = 0,
                       dtype=np.complex128) -> WienerPath:
    times = np.asarray(t_grid, dtype=np.float64)
    if len(times) < 2 or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be increasing with >= 2 points")
    dts = np.diff(times)
    if np.max(np.abs(dts - dts[0])) > 1e-12 * dts[0]:
        raise ValueError("time grid must be uniform")
    L = grid.n_modes_axis
    inc = np.zeros((len(times) - 1, L, L, L), dtype=dtype)
    gen = _rng.generator(seed, _rng.WIENER, sample=sample)
    for j in range(len(times) - 1):
        inc[j] = _rng.hermitian_unit_normal(grid, gen, dtype=dtype) * np.sqrt(dts[j])
    return WienerPath(grid, times, inc, seed, sample)


def y_process(path: WienerPath):
    """Y(t) = <nabla>^{-1} W(t): cumulative increments scaled by <n>^{-1}.

    Returns a Trajectory; Y(1) has the law of mu_1.
    """
    from .objects import Trajectory
    w = grid_geometry(path.grid)["bracket2"] ** (-0.5)
    T = len(path.times)
    L = path.grid.n_modes_axis
    data = np.zeros((T, L, L, L), dtype=path.increments.dtype)
    acc = np.zeros((L, L, L), dtype=path.increments.dtype)
    for j in range(1, T):
        acc = acc + path.increments[j - 1]
        data[j] = acc * w
    return Trajectory(path.grid, path.times.copy(), data)


# -- exact second-moment identities and checks ------------------------------------

def pair_convolution(N: int, kind: str = "cube") -> np.ndarray:
    """P_N(m) = sum_{m=n1+n2} chi^2(n1) chi^2(n2) <n1>^{-2} <n2>^{-2}.

    Returned on the (2N+1 doubled) FFT layout of a SpectralGrid(2N), exact
    linear convolution via zero padding.
    """
    import scipy.fft as sfft
    chi2, br2 = _chi_sq_lattice(N, kind)
    a = chi2 / br2
    P = sfft.next_fast_len(4 * N + 1, real=True)
    big = np.zeros((P, P, P))
    L = 2 * N + 1
    src = np.fft.fftfreq(L, 1.0 / L).astype(np.int64)
    idx = src % P
    big[np.ix_(idx, idx, idx)] = a
    ah = sfft.rfftn(big)
    conv = sfft.irfftn(ah * ah, s=(P, P, P))
    # collect onto the lattice of SpectralGrid(2N)
    L2 = 4 * N + 1
    src2 = np.fft.fftfreq(L2, 1.0 / L2).astype(np.int64)
    idx2 = src2 % P
    return conv[np.ix_(idx2, idx2, idx2)]


def wick_square_pair_sum(N: int, kind: str = "cube", weight: str = "H-1") -> float:
    """Exact E ||:Y_N^2(1):||^2 in H^{-1} (weight="H-1") or of pi_N Zdot in H^1.

    E|hat{:Y_N^2:}(m, t)|^2 = 2 t^2 P_N(m); at t=1 the H^{-1} norm sums
    <m>^{-2} 2 P_N(m), while the H^1 norm of Zdot_N = pi_N (1-Delta)^{-1}
    :Y_N^2: sums chi_N^2(m) <m>^{-2} 2 P_N(m).
    """
    conv = pair_convolution(N, kind)
    g2 = SpectralGrid(2 * N)
    br2 = grid_geometry(g2)["bracket2"]
    if weight == "H-1":
        return float(np.sum(2.0 * conv / br2))
    if weight == "zdot-H1":
        chi = chi_multiplier(g2, kind, N)
        return float(np.sum(chi * chi * 2.0 * conv / br2))
    raise ValueError("weight must be 'H-1' or 'zdot-H1'")


def wick_pair_covariance_check(k: int, l: int, N: int, samples: int, seed: int = 0,
                               x=(0.0, 0.0, 0.0), y=(0.5, 1.2, -0.7), kind: str = "cube"):
    """MC estimate of E[H_k(Y_N(x)) H_l(Y_N(y))] minus delta_{kl} k! E[Y_N(x)Y_N(y)]^k.

    Returns (difference, standard error, formula value).  Evaluates the
    field at the two points directly from the mode sums.
    """
    if k not in (1, 2, 3) or l not in (1, 2, 3):
        raise ValueError("degrees must lie in {1,2,3}")
    grid = SpectralGrid(N)
    geom = grid_geometry(grid)
    chi = chi_multiplier(grid, kind, N)
    sig = sigma_n(N, kind)
    ax = geom["axis"].astype(np.float64)
    ex = [np.exp(1j * ax * c) for c in x]
    ey = [np.exp(1j * ax * c) for c in y]
    # E[Y(x)Y(y)] = sum chi^2 <n>^{-2} e_n(x-y)
    exy = [np.exp(1j * ax * (a - b)) for a, b in zip(x, y)]
    cov = np.real(np.sum(
        (chi * chi / geom["bracket2"]) *
        exy[0][:, None, None] * exy[1][None, :, None] * exy[2][None, None, :]))
    formula = (float(math.factorial(k)) * cov ** k) if k == l else 0.0

    vals = np.empty(samples)
    w = chi / np.sqrt(geom["bracket2"])
    chunk = max(1, min(samples, int(2e7 / grid.mode_count)))
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        gen = _rng.generator(seed, _rng.MU, sample=done)
        z = _rng.hermitian_unit_normal(grid, gen, batch=(b,))
        modes = z * w
        fx = np.real(np.einsum("bijk,i,j,k->b", modes, ex[0], ex[1], ex[2]))
        fy = np.real(np.einsum("bijk,i,j,k->b", modes, ey[0], ey[1], ey[2]))
        vals[done:done + b] = hermite(k, fx, sig) * hermite(l, fy, sig)
        done += b
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(samples))
    return est - formula, se, formula
