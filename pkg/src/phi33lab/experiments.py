"""Experiment recipes binding the modules into reproducible scans.

These drivers stream Monte-Carlo ensembles without storing trajectories,
in float32 where the observable is an ensemble average, and key every
draw by (seed, sample) so results are reproducible and chunk-independent.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.fft as sfft

from . import rng as _rng
from .fields import sigma_n
from .propagators import StepCoefficients
from .spectral import (
    SpectralField, SpectralGrid, chi_multiplier, fit_spectral_slope_full,
    grid_geometry, shell_average_power,
)

__all__ = [
    "sigma_scaling", "wick_norm_potential_scan", "smoothing_slope_scan",
    "hermite_orthogonality_scan",
]


def sigma_scaling(n_list, kind: str = "cube") -> dict:
    """sigma_N and sigma_N / N over a list of cutoffs."""
    rows = []
    for N in n_list:
        s = sigma_n(N, kind)
        rows.append({"N": N, "kind": kind, "sigma_n": s, "sigma_n_over_n": s / N})
    return {"rows": rows}


def _embed_half(coeff, L, G, P):
    """Place cube modes into an rfftn half-spectrum of size (P, P, P//2+1)."""
    src = np.fft.fftfreq(L, 1.0 / L).astype(np.int64)
    dst = src % P
    half = np.zeros(coeff.shape[:-3] + (P, P, P // 2 + 1), dtype=coeff.dtype)
    half[..., dst[:, None, None], dst[None, :, None], np.arange(G + 1)[None, None, :]] = \
        coeff[..., :, :, : G + 1]
    return half


def _half_weights(P, weight_fn):
    """Mode weights on the rfftn half grid, doubling the implied conjugates."""
    ax = np.fft.fftfreq(P, 1.0 / P).astype(np.int64)
    kz = np.arange(P // 2 + 1)
    n1 = ax[:, None, None].astype(np.float64)
    n2 = ax[None, :, None].astype(np.float64)
    n3 = kz[None, None, :].astype(np.float64)
    w = weight_fn(n1 * n1 + n2 * n2 + n3 * n3)
    dup = np.ones(P // 2 + 1)
    dup[1:] = 2.0
    if P % 2 == 0:
        dup[-1] = 1.0
    return w * dup[None, None, :]


def wick_norm_potential_scan(n_list, n_samples: int, seed: int, sigma: float = 0.1,
                             A: float = 10.0, gamma: float = 3.0, kind: str = "cube",
                             dtype=np.float32, progress=None) -> dict:
    """Samples of ||:u_N^2:||_{H^{-1}}^2 and of R_N(u), G_N(u) under the free field.

    One mu-sample per draw serves all three observables; the Wick square is
    evaluated alias-free on a 4N-padded grid, and the H^{-1} norm summed
    exactly over its full support.
    """
    out = {}
    for N in n_list:
        G = N
        L = 2 * N + 1
        P = sfft.next_fast_len(4 * N + 1, real=True)
        grid = SpectralGrid(N)
        geom = grid_geometry(grid)
        sigN = sigma_n(N, kind)
        chi = chi_multiplier(grid, kind, N).astype(dtype)
        amp = (chi / np.sqrt(geom["bracket2"])).astype(dtype)
        hw = _half_weights(P, lambda r2: 1.0 / (1.0 + r2))
        cdtype = np.complex64 if dtype == np.float32 else np.complex128
        h_samples = np.empty(n_samples)
        r_samples = np.empty(n_samples)
        logn34 = math.log(N) ** (-0.75) if N >= 2 else float("nan")
        for s in range(n_samples):
            gen = _rng.generator(seed, _rng.MU, sample=s)
            z = _rng.hermitian_unit_normal(grid, gen, dtype=cdtype)
            coeff = z * amp
            half = _embed_half(coeff, L, G, P)
            phys = sfft.irfftn(half, s=(P, P, P), norm="forward")
            u0 = float(coeff[0, 0, 0].real)
            l2 = float(np.sum(np.abs(coeff) ** 2, dtype=np.float64))
            mean3 = float(np.mean(phys.astype(np.float64) ** 3))
            wick = phys * phys
            wick -= sigN
            wh = sfft.rfftn(wick, norm="forward")
            h_samples[s] = float(np.sum(hw * (wh.real.astype(np.float64) ** 2
                                              + wh.imag.astype(np.float64) ** 2)))
            w2 = l2 - sigN
            w3 = mean3 - 3.0 * sigN * u0
            r_samples[s] = -(sigma / 3.0) * w3 + A * abs(w2) ** gamma
            if progress and (s + 1) % progress == 0:
                print(f"    N={N}: {s + 1}/{n_samples}", flush=True)
        out[N] = {
            "h_norm_samples": h_samples,
            "r_samples": r_samples,
            "g_samples": logn34 * r_samples,
            "sigma_n": sigN,
        }
    return out


def fit_log_divergence(scan: dict) -> dict:
    """Least-squares fit a*log N + b of the mean Wick-square norms."""
    ns = sorted(scan)
    means = np.array([np.mean(scan[N]["h_norm_samples"]) for N in ns])
    ses = np.array([np.std(scan[N]["h_norm_samples"], ddof=1)
                    / np.sqrt(len(scan[N]["h_norm_samples"])) for N in ns])
    x = np.log(np.array(ns, dtype=float))
    Amat = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(Amat, means, rcond=None)
    resid = means - Amat @ coef
    r2 = 1.0 - np.sum(resid ** 2) / np.sum((means - means.mean()) ** 2)
    return {"a": float(coef[0]), "b": float(coef[1]), "r2": float(r2),
            "n": ns, "means": means.tolist(), "ses": ses.tolist()}


def smoothing_slope_scan(n_grid: int, n_samples: int, seed: int, n_steps: int = 16,
                         kind: str = "cube", dtype=np.float32, progress=None) -> dict:
    """Terminal shell powers of the linear object and its integrated Wick square.

    Streams the exact-in-law linear update with stationary Gaussian-pair
    data, accumulates the Duhamel integral of the Wick square with the
    piecewise-linear exponential integrator, and returns shell-averaged
    powers at t = 1 plus fitted slopes.
    """
    N = n_grid
    grid = SpectralGrid(N)
    L = grid.n_modes_axis
    geom = grid_geometry(grid)
    sigN = sigma_n(N, kind)
    chi = chi_multiplier(grid, kind, N)
    P = sfft.next_fast_len(3 * N + 1, real=True)
    cdtype = np.complex64 if dtype == np.float32 else np.complex128
    dt = 1.0 / n_steps
    sc = StepCoefficients(grid, dt)
    m11, m12 = sc.m11.astype(dtype), sc.m12.astype(dtype)
    m21, m22 = sc.m21.astype(dtype), sc.m22.astype(dtype)
    u11, u21, u22 = sc.u11.astype(dtype), sc.u21.astype(dtype), sc.u22.astype(dtype)
    j0, j1, dD = sc.j0.astype(dtype), sc.j1.astype(dtype), sc.dD.astype(dtype)
    amp_pos = (1.0 / np.sqrt(geom["bracket2"])).astype(dtype)
    pw_psi = np.zeros((L, L, L))
    pw_obj = np.zeros((L, L, L))

    def wick_sq(pos):
        half = _embed_half((chi * pos).astype(cdtype), L, N, P)
        phys = sfft.irfftn(half, s=(P, P, P), norm="forward")
        phys = phys * phys - sigN
        wh = sfft.rfftn(phys, norm="forward")
        return _extract_half(wh, L, N, P).astype(cdtype)

    for s in range(n_samples):
        gen = _rng.generator(seed, _rng.INIT, sample=s)
        pos = _rng.hermitian_unit_normal(grid, gen, dtype=cdtype) * amp_pos
        vel = _rng.hermitian_unit_normal(grid, gen, dtype=cdtype)
        ngen = _rng.generator(seed, _rng.WIENER_AUX, sample=s)
        dpos = np.zeros((L, L, L), dtype=cdtype)
        dvel = np.zeros((L, L, L), dtype=cdtype)
        f_prev = wick_sq(pos)
        for j in range(n_steps):
            z1 = _rng.hermitian_unit_normal(grid, ngen, dtype=cdtype)
            z2 = _rng.hermitian_unit_normal(grid, ngen, dtype=cdtype)
            pos, vel = (m11 * pos + m12 * vel + u11 * z1,
                        m21 * pos + m22 * vel + u21 * z1 + u22 * z2)
            f_new = wick_sq(pos)
            b = (f_new - f_prev) / np.array(dt, dtype=dtype)
            dpos, dvel = (m11 * dpos + m12 * dvel + f_prev * j0 + b * (dt * j0 - j1),
                          m21 * dpos + m22 * dvel + f_prev * dD + b * j0)
            f_prev = f_new
        pw_psi += np.abs(pos.astype(np.complex128)) ** 2
        pw_obj += np.abs((chi * dpos).astype(np.complex128)) ** 2
        if progress and (s + 1) % progress == 0:
            print(f"    smoothing scan: {s + 1}/{n_samples}", flush=True)
    pw_psi /= n_samples
    pw_obj /= n_samples
    # low shells carry <n>-vs-|n| curvature, top shells the projector edge
    kmin = max(2, int(round(0.15 * N)))
    kmax = max(kmin + 4, int(round(0.85 * N)))
    sh_psi = shell_average_power(pw_psi, grid, k_min=kmin, k_max=kmax)
    sh_obj = shell_average_power(pw_obj, grid, k_min=kmin, k_max=kmax)
    return {
        "psi_shells": sh_psi, "obj20_shells": sh_obj,
        "psi_fit": fit_spectral_slope_full((sh_psi[0], sh_psi[1])),
        "obj20_fit": fit_spectral_slope_full((sh_obj[0], sh_obj[1])),
        "n_samples": n_samples, "n_grid": n_grid, "n_steps": n_steps,
    }


def _extract_half(wh, L, G, P):
    """Back from an rfftn half-spectrum to cube modes (|n_j| <= G)."""
    src = np.fft.fftfreq(L, 1.0 / L).astype(np.int64)
    dst = src % P
    coeff = np.zeros(wh.shape[:-3] + (L, L, L), dtype=np.complex128)
    coeff[..., :, :, : G + 1] = wh[..., dst[:, None, None], dst[None, :, None],
                                   np.arange(G + 1)[None, None, :]]
    from .spectral import hermitian_reflect
    refl = hermitian_reflect(coeff)
    neg = np.arange(G + 1, L)
    coeff[..., :, :, neg] = refl[..., :, :, neg]
    return coeff


def hermite_orthogonality_scan(N: int, n_samples: int, seed: int,
                               pairs=((1, 2), (1, 3), (2, 3))) -> dict:
    """Cross moments E[H_k H_l] at distinct points for k != l (and k = l checks)."""
    from .fields import wick_pair_covariance_check
    rows = []
    for k, l in pairs:
        diff, se, formula = wick_pair_covariance_check(k, l, N, n_samples, seed)
        rows.append({"k": k, "l": l, "difference": diff, "se": se,
                     "formula": formula, "z": diff / se if se > 0 else 0.0,
                     "n_samples": n_samples, "N": N})
    return {"rows": rows}
