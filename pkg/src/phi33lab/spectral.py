"""Discrete Fourier representation of real fields on the 3-torus.

Conventions
-----------
A field u on T^3 is represented by its Fourier coefficients u_hat(n),
n = (n1, n2, n3) with |n_j| <= n_grid, stored in FFT layout (index i
corresponds to mode i for i <= n_grid and to mode i - L for i > n_grid,
L = 2*n_grid + 1).  The torus carries the normalized Lebesgue measure,
so that

    int u dx        = u_hat(0),
    int u^2 dx      = sum_n |u_hat(n)|^2        (Parseval),
    u(x)            = sum_n u_hat(n) e^{i n.x}.

Real fields satisfy the Hermitian symmetry u_hat(-n) = conj(u_hat(n)).
Products are evaluated on zero-padded physical grids sized so that the
retained output coefficients carry no aliasing error; L^p norms for
p != 2 are Riemann sums on the same padded grid (the artifact's
definition of discrete L^p).

Japanese brackets: <n> = sqrt(1 + |n|^2), <<n>> = sqrt(3/4 + |n|^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft

__all__ = [
    "SpectralGrid", "SpectralField", "zeros", "basis_field", "constant_field",
    "smoothstep", "lp_bump", "smooth_cutoff", "chi_multiplier", "project",
    "lp_multiplier", "n_lp_blocks", "lp_block", "paraproduct", "multiply",
    "pointwise", "to_physical", "from_physical", "integral", "l2_inner",
    "sobolev_norm", "heat_smooth", "lp_norm", "w_inf_norm", "a_norm",
    "shell_average_power", "fit_spectral_slope", "fit_spectral_slope_full",
    "hermitian_reflect", "is_hermitian",
]

PROJECTOR_KINDS = ("cube", "ball", "smooth")


@dataclass(frozen=True)
class SpectralGrid:
    """Cubic mode grid: all n with max_j |n_j| <= n_grid.

    pad_factor fixes the physical padding for quadratic products:
    P >= pad_factor*(2*n_grid+1) - 1 points per axis (exact quadratic
    convolution at the default 2).  Products of higher degree get the
    larger of that and the (degree+1)*n_grid + 1 alias-free minimum.
    """

    n_grid: int
    pad_factor: float = 2.0

    def __post_init__(self):
        if self.n_grid < 1:
            raise ValueError("n_grid must be >= 1")
        if self.pad_factor < 2.0:
            raise ValueError("pad_factor must be >= 2")

    @property
    def n_modes_axis(self) -> int:
        return 2 * self.n_grid + 1

    @property
    def mode_count(self) -> int:
        return self.n_modes_axis ** 3

    def pad_points(self, degree: int = 2) -> int:
        quad = int(np.ceil(self.pad_factor * self.n_modes_axis)) - 1
        need = (degree + 1) * self.n_grid + 1
        return sfft.next_fast_len(max(quad, need), real=True)


# cached per-grid mode geometry ------------------------------------------------

_GEOM_CACHE: dict = {}


def _axis_modes(L: int) -> np.ndarray:
    return np.fft.fftfreq(L, 1.0 / L).astype(np.int64)


def grid_geometry(grid: SpectralGrid) -> dict:
    """Mode component arrays and bracket weights, cached per grid size."""
    key = grid.n_grid
    geom = _GEOM_CACHE.get(key)
    if geom is None:
        L = grid.n_modes_axis
        ax = _axis_modes(L)
        n1 = ax[:, None, None].astype(np.float64)
        n2 = ax[None, :, None].astype(np.float64)
        n3 = ax[None, None, :].astype(np.float64)
        absn2 = n1 * n1 + n2 * n2 + n3 * n3
        geom = {
            "axis": ax,
            "n1": n1, "n2": n2, "n3": n3,
            "abs2": absn2,
            "abs": np.sqrt(absn2),
            "bracket2": 1.0 + absn2,
            "kg": np.sqrt(0.75 + absn2),
            "maxabs": np.maximum(np.maximum(np.abs(n1), np.abs(n2)), np.abs(n3)),
        }
        _GEOM_CACHE[key] = geom
    return geom


@dataclass
class SpectralField:
    """Fourier coefficients of a field, possibly batched.

    coeff has shape (..., L, L, L) in FFT layout; leading axes are batch
    dimensions (all operations broadcast over them).
    """

    grid: SpectralGrid
    coeff: np.ndarray

    def __post_init__(self):
        L = self.grid.n_modes_axis
        if self.coeff.shape[-3:] != (L, L, L):
            raise ValueError("coefficient array does not match grid")

    @property
    def batch_shape(self):
        return self.coeff.shape[:-3]

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeff.copy())

    def __add__(self, other):
        _check_same_grid(self, other)
        return SpectralField(self.grid, self.coeff + other.coeff)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return SpectralField(self.grid, self.coeff - other.coeff)

    def __mul__(self, scalar):
        return SpectralField(self.grid, self.coeff * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.coeff)


def _check_same_grid(f: SpectralField, g: SpectralField):
    if f.grid.n_grid != g.grid.n_grid:
        raise ValueError("fields live on different grids")


def zeros(grid: SpectralGrid, batch=(), dtype=np.complex128) -> SpectralField:
    L = grid.n_modes_axis
    return SpectralField(grid, np.zeros(tuple(batch) + (L, L, L), dtype=dtype))


def basis_field(grid: SpectralGrid, n, amplitude=1.0) -> SpectralField:
    """The single complex exponential amplitude * e_n (not Hermitian alone)."""
    f = zeros(grid)
    i = tuple(int(c) % grid.n_modes_axis for c in n)
    if max(abs(int(c)) for c in n) > grid.n_grid:
        raise ValueError("mode outside grid")
    f.coeff[i] = amplitude
    return f


def constant_field(grid: SpectralGrid, value) -> SpectralField:
    f = zeros(grid)
    f.coeff[..., 0, 0, 0] = value
    return f


def hermitian_reflect(coeff: np.ndarray) -> np.ndarray:
    """conj(c(-n)) in FFT layout, acting on the last three axes."""
    out = np.conj(coeff)
    for ax in (-3, -2, -1):
        out = np.flip(out, axis=ax)
        out = np.roll(out, 1, axis=ax)
    return out


def is_hermitian(f: SpectralField, tol=1e-10) -> bool:
    return bool(np.max(np.abs(f.coeff - hermitian_reflect(f.coeff))) <= tol)


# physical-grid transforms -----------------------------------------------------

def _embed_indices(L: int, G: int, P: int):
    src = _axis_modes(L)
    keep = np.abs(src) <= G
    return np.asarray(src[keep] % P), np.where(keep)[0]


def to_physical(f: SpectralField, points: int | None = None, degree: int = 2) -> np.ndarray:
    """Real field values on the padded physical grid (requires Hermitian input)."""
    P = points or f.grid.pad_points(degree)
    G = f.grid.n_grid
    L = f.grid.n_modes_axis
    if P < L:
        raise ValueError("physical grid coarser than mode grid")
    dst, src = _embed_indices(L, G, P)
    batch = f.coeff.shape[:-3]
    half = np.zeros(batch + (P, P, P // 2 + 1), dtype=f.coeff.dtype)
    # modes with n3 >= 0 determine the real transform's half spectrum
    pos3 = src[: G + 1]
    half[..., dst[:, None, None], dst[None, :, None], np.arange(G + 1)[None, None, :]] = \
        f.coeff[..., src[:, None, None], src[None, :, None], pos3[None, None, :]]
    return sfft.irfftn(half, s=(P, P, P), axes=(-3, -2, -1), norm="forward")


def to_physical_c(f: SpectralField, points: int | None = None, degree: int = 2) -> np.ndarray:
    """Complex physical values (no symmetry assumption)."""
    P = points or f.grid.pad_points(degree)
    L = f.grid.n_modes_axis
    G = f.grid.n_grid
    dst, src = _embed_indices(L, G, P)
    big = np.zeros(f.coeff.shape[:-3] + (P, P, P), dtype=np.complex128)
    big[..., dst[:, None, None], dst[None, :, None], dst[None, None, :]] = \
        f.coeff[..., src[:, None, None], src[None, :, None], src[None, None, :]]
    return sfft.ifftn(big, axes=(-3, -2, -1), norm="forward")


def from_physical(values: np.ndarray, grid: SpectralGrid) -> SpectralField:
    """Band-limit physical values back to the grid (real input)."""
    P = values.shape[-1]
    G = grid.n_grid
    L = grid.n_modes_axis
    half = sfft.rfftn(values, axes=(-3, -2, -1), norm="forward")
    dst, src = _embed_indices(L, G, P)
    coeff = np.zeros(values.shape[:-3] + (L, L, L), dtype=np.complex128)
    pos3 = src[: G + 1]
    coeff[..., src[:, None, None], src[None, :, None], pos3[None, None, :]] = \
        half[..., dst[:, None, None], dst[None, :, None], np.arange(G + 1)[None, None, :]]
    # negative-n3 half from Hermitian symmetry
    refl = hermitian_reflect(coeff)
    neg3 = src[G + 1:]
    coeff[..., :, :, neg3] = refl[..., :, :, neg3]
    return SpectralField(grid, coeff)


def from_physical_c(values: np.ndarray, grid: SpectralGrid) -> SpectralField:
    P = values.shape[-1]
    G = grid.n_grid
    L = grid.n_modes_axis
    big = sfft.fftn(values, axes=(-3, -2, -1), norm="forward")
    dst, src = _embed_indices(L, G, P)
    coeff = np.zeros(values.shape[:-3] + (L, L, L), dtype=np.complex128)
    coeff[..., src[:, None, None], src[None, :, None], src[None, None, :]] = \
        big[..., dst[:, None, None], dst[None, :, None], dst[None, None, :]]
    return SpectralField(grid, coeff)


# frequency projectors ---------------------------------------------------------

def smoothstep(u: np.ndarray) -> np.ndarray:
    v = np.clip(u, 0.0, 1.0)
    return v * v * (3.0 - 2.0 * v)


def smooth_cutoff(xi: np.ndarray) -> np.ndarray:
    """Radial bump: 1 on |xi|<=1/2, 0 on |xi|>=1, smoothstep transition."""
    return 1.0 - smoothstep(2.0 * np.asarray(xi) - 1.0)


def chi_multiplier(grid: SpectralGrid, kind: str, N: int) -> np.ndarray:
    geom = grid_geometry(grid)
    if kind == "cube":
        return (geom["maxabs"] <= N).astype(np.float64)
    if kind == "ball":
        return (geom["abs2"] <= N * N).astype(np.float64)
    if kind == "smooth":
        return smooth_cutoff(geom["abs"] / N)
    raise ValueError(f"unknown projector kind {kind!r}")


def project(f: SpectralField, kind: str, N: int) -> SpectralField:
    if N > f.grid.n_grid:
        raise ValueError("projector exceeds grid")
    return SpectralField(f.grid, f.coeff * chi_multiplier(f.grid, kind, N))


# Littlewood-Paley blocks and paraproducts --------------------------------------

def lp_bump(r: np.ndarray) -> np.ndarray:
    """phi: 1 on [0, 5/4], 0 on [8/5, inf), smoothstep in between."""
    return 1.0 - smoothstep((np.asarray(r, dtype=np.float64) - 1.25) / 0.35)


def n_lp_blocks(grid: SpectralGrid) -> int:
    rmax = np.sqrt(3.0) * grid.n_grid
    j = 0
    while (1.25 * 2 ** j) < rmax:
        j += 1
    return j + 1


def lp_multiplier(grid: SpectralGrid, j: int) -> np.ndarray:
    r = grid_geometry(grid)["abs"]
    if j == 0:
        return lp_bump(r)
    return lp_bump(r / 2 ** j) - lp_bump(r / 2 ** (j - 1))


def lp_block(f: SpectralField, j: int) -> SpectralField:
    if j < 0 or j > int(np.log2(f.grid.n_grid)) + 2:
        raise ValueError("block index out of range for this grid")
    return SpectralField(f.grid, f.coeff * lp_multiplier(f.grid, j))


def _lp_cumulative(grid: SpectralGrid, j: int) -> np.ndarray:
    """sum_{i<=j} phi_i = phi(|n|/2^j); zero for j < 0."""
    if j < 0:
        return np.zeros_like(grid_geometry(grid)["abs"])
    return lp_bump(grid_geometry(grid)["abs"] / 2 ** j)


def paraproduct(f: SpectralField, g: SpectralField, part: str) -> SpectralField:
    """One Littlewood-Paley part of the product fg.

    part="lo":  sum_{j<k-2} P_j f P_k g   (low-high paraproduct)
    part="res": sum_{|j-k|<=2} P_j f P_k g (resonant part)
    part="hi":  sum_{k<j-2} P_j f P_k g   (high-low paraproduct)

    The three parts sum exactly to multiply(f, g).
    """
    _check_same_grid(f, g)
    if part not in ("lo", "res", "hi"):
        raise ValueError("part must be lo, res or hi")
    grid = f.grid
    J = n_lp_blocks(grid)
    acc = zeros(grid, batch=np.broadcast_shapes(f.batch_shape, g.batch_shape)).coeff
    for k in range(J):
        if part == "lo":
            a = SpectralField(grid, f.coeff * _lp_cumulative(grid, k - 3))
            b = SpectralField(grid, g.coeff * lp_multiplier(grid, k))
        elif part == "hi":
            a = SpectralField(grid, f.coeff * lp_multiplier(grid, k))
            b = SpectralField(grid, g.coeff * _lp_cumulative(grid, k - 3))
        else:
            near = sum(lp_multiplier(grid, j) for j in range(max(0, k - 2), min(J, k + 3)))
            a = SpectralField(grid, f.coeff * near)
            b = SpectralField(grid, g.coeff * lp_multiplier(grid, k))
        acc = acc + multiply(a, b).coeff
    return SpectralField(grid, acc)


# products ----------------------------------------------------------------------

def multiply(f: SpectralField, g: SpectralField, degree: int = 2) -> SpectralField:
    """Dealiased product: exact coefficients of fg on the grid."""
    _check_same_grid(f, g)
    P = f.grid.pad_points(degree)
    if is_hermitian(f, tol=1e-12) and is_hermitian(g, tol=1e-12):
        uf = to_physical(f, P)
        ug = to_physical(g, P) if g is not f else uf
        return from_physical(uf * ug, f.grid)
    uf = to_physical_c(f, P)
    ug = to_physical_c(g, P) if g is not f else uf
    return from_physical_c(uf * ug, f.grid)


def pointwise(f: SpectralField, func, degree: int) -> SpectralField:
    """Apply a pointwise map on the physical grid padded for `degree`."""
    P = f.grid.pad_points(degree)
    return from_physical(func(to_physical(f, P)), f.grid)


# norms and diagnostics ----------------------------------------------------------

def integral(f: SpectralField):
    """int f dx with the normalized measure (the zero mode)."""
    return np.real(f.coeff[..., 0, 0, 0])


def l2_inner(f: SpectralField, g: SpectralField):
    _check_same_grid(f, g)
    return np.real(np.sum(np.conj(f.coeff) * g.coeff, axis=(-3, -2, -1)))


def sobolev_norm(f: SpectralField, s: float):
    w = grid_geometry(f.grid)["bracket2"] ** s
    return np.sqrt(np.sum(w * np.abs(f.coeff) ** 2, axis=(-3, -2, -1)))


def heat_smooth(f: SpectralField, t: float) -> SpectralField:
    if t <= 0:
        raise ValueError("heat time must be positive")
    mult = np.exp(-t * grid_geometry(f.grid)["abs2"])
    return SpectralField(f.grid, f.coeff * mult)


def lp_norm(f: SpectralField, p: float, degree: int = 2):
    """Discrete L^p norm: Riemann quadrature on the padded physical grid."""
    u = to_physical(f, f.grid.pad_points(degree))
    return (np.mean(np.abs(u) ** p, axis=(-3, -2, -1))) ** (1.0 / p)


def w_inf_norm(f: SpectralField, s: float):
    """W^{s,inf} norm: sup norm of <nabla>^s f on the padded grid."""
    w = grid_geometry(f.grid)["bracket2"] ** (s / 2.0)
    g = SpectralField(f.grid, f.coeff * w)
    return np.max(np.abs(to_physical(g)), axis=(-3, -2, -1))


def a_norm(f: SpectralField, t_grid=None):
    """sup over t of t^{3/8} || p_t * f ||_{L^3}, on a dyadic grid by default."""
    if t_grid is None:
        t_grid = [2.0 ** (-k) for k in range(13)]
    t_grid = list(t_grid)
    if len(t_grid) == 0:
        raise ValueError("t_grid must be nonempty")
    best = None
    for t in t_grid:
        val = t ** 0.375 * lp_norm(heat_smooth(f, t), 3.0)
        best = val if best is None else np.maximum(best, val)
    return best


# spectral slope fits -------------------------------------------------------------

def shell_average_power(power: np.ndarray, grid: SpectralGrid,
                        k_min: int = 1, k_max: int | None = None):
    """Radial shell averages of a per-mode power array (|u_hat(n)|^2 or its mean).

    Shells are k = round(|n|); returns (k values, mean power, mode counts).
    """
    geom = grid_geometry(grid)
    kidx = np.rint(geom["abs"]).astype(np.int64)
    if k_max is None:
        k_max = grid.n_grid
    ks, means, counts = [], [], []
    flat = power.reshape(-1)
    kflat = kidx.reshape(-1)
    for k in range(k_min, k_max + 1):
        sel = kflat == k
        c = int(np.sum(sel))
        if c == 0:
            continue
        ks.append(k)
        counts.append(c)
        means.append(float(np.mean(flat[sel])))
    return np.array(ks), np.array(means), np.array(counts)


def fit_spectral_slope_full(shell_power) -> tuple[float, float, float]:
    """Least-squares slope of log power against log shell radius.

    Accepts a mapping {shell: power} or a (shells, powers) pair.  Returns
    (beta, stderr, s) where s = -(beta + 3)/2 is the implied marginal
    Sobolev regularity in d = 3.
    """
    if isinstance(shell_power, dict):
        ks = np.array(sorted(shell_power))
        pw = np.array([shell_power[k] for k in ks], dtype=np.float64)
    else:
        ks, pw = map(np.asarray, shell_power)
    good = pw > 0
    ks, pw = ks[good], pw[good]
    if len(ks) < 4:
        raise ValueError("need at least 4 shells with positive power")
    x = np.log(ks.astype(np.float64))
    y = np.log(pw)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    var = np.sum(resid ** 2) / dof
    sxx = np.sum((x - x.mean()) ** 2)
    stderr = float(np.sqrt(var / sxx))
    beta = float(coef[0])
    return beta, stderr, -(beta + 3.0) / 2.0


def fit_spectral_slope(shell_power) -> float:
    return fit_spectral_slope_full(shell_power)[0]
