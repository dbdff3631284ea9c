"""Damped Klein-Gordon propagators and exact per-mode integrators.

The linear flow is v'' + v' + <n>^2 v = F per mode, whose fundamental
solution is d(t) = e^{-t/2} sin(t<<n>>)/<<n>> with <<n>> = sqrt(3/4+|n|^2).
Everything here is diagonal in Fourier space; with z = -1/2 + i<<n>> all
step coefficients are exact complex-exponential integrals, so the Duhamel
integrator is exact for piecewise-linear forcing and the stochastic update
reproduces the exact Gaussian transition of the damped wave SDE.
"""

from __future__ import annotations

import numpy as np

from .spectral import SpectralGrid, SpectralField, grid_geometry

__all__ = [
    "propagator_apply", "d_multiplier", "dt_d_multiplier", "StepCoefficients",
    "step_coefficients", "stationary_pair_covariance",
]


def _omega(grid: SpectralGrid) -> np.ndarray:
    return grid_geometry(grid)["kg"]


def d_multiplier(grid: SpectralGrid, t: float) -> np.ndarray:
    om = _omega(grid)
    return np.exp(-0.5 * t) * np.sin(t * om) / om


def dt_d_multiplier(grid: SpectralGrid, t: float) -> np.ndarray:
    om = _omega(grid)
    return np.exp(-0.5 * t) * (np.cos(t * om) - 0.5 * np.sin(t * om) / om)


def propagator_apply(kind: str, t: float, data) -> SpectralField:
    """Apply D(t), dtD(t) to a field, or S(t) to an initial pair (f, g).

    S(t)(f,g) = dtD(t) f + D(t)(f+g) solves the homogeneous damped wave
    equation with position f and velocity g at time zero.
    """
    if t < 0:
        raise ValueError("propagator time must be >= 0")
    if kind == "S":
        f, g = data
        grid = f.grid
        return SpectralField(grid, dt_d_multiplier(grid, t) * f.coeff
                             + d_multiplier(grid, t) * (f.coeff + g.coeff))
    if kind not in ("D", "dtD"):
        raise ValueError("kind must be D, dtD or S")
    grid = data.grid
    mult = d_multiplier(grid, t) if kind == "D" else dt_d_multiplier(grid, t)
    return SpectralField(grid, mult * data.coeff)


class StepCoefficients:
    """All per-mode coefficients for one uniform step of length dt.

    Homogeneous 2x2 map (position v, velocity w):
        v' = m11 v + m12 w,   w' = m21 v + m22 w
    Particular Duhamel terms for forcing a + b s on the step:
        v' += a j0 + b (dt j0 - j1),    w' += a dD + b j0
    Stochastic forcing sqrt(2) dW contributes Gaussian noise with
    covariance Q (q11, q12, q22) and cross-covariance with the plain
    increment Delta B given by (r1, r2) = sqrt(2) (j0, dD).
    """

    def __init__(self, grid: SpectralGrid, dt: float):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.dt = float(dt)
        om = _omega(grid)
        br2 = grid_geometry(grid)["bracket2"]
        z = -0.5 + 1j * om
        ez = np.exp(z * dt)
        self.dD = np.imag(ez) / om                       # d(dt)
        self.dtD = np.imag(z * ez) / om                  # d'(dt)
        self.m11 = self.dtD + self.dD
        self.m12 = self.dD
        self.m21 = -br2 * self.dD
        self.m22 = self.dtD
        self.j0 = np.imag((ez - 1.0) / z) / om
        self.j1 = np.imag(dt * ez / z - (ez - 1.0) / z / z) / om
        e2z = ez * ez
        decay = 1.0 - np.exp(-dt)
        self.q11 = (decay - np.real((e2z - 1.0) / (2.0 * z))) / (om * om)
        self.q12 = self.dD ** 2
        self.q22 = (np.abs(z) ** 2 * decay - 0.5 * np.real(z * (e2z - 1.0))) / (om * om)
        self.r1 = np.sqrt(2.0) * self.j0
        self.r2 = np.sqrt(2.0) * self.dD
        # conditional covariance given the increment: Q - r r^T / dt
        c11 = self.q11 - self.r1 * self.r1 / dt
        c12 = self.q12 - self.r1 * self.r2 / dt
        c22 = self.q22 - self.r2 * self.r2 / dt
        self.l11 = np.sqrt(np.maximum(c11, 0.0))
        safe = np.where(self.l11 > 0, self.l11, 1.0)
        self.l21 = np.where(self.l11 > 0, c12 / safe, 0.0)
        self.l22 = np.sqrt(np.maximum(c22 - self.l21 ** 2, 0.0))
        # unconditional factorization of Q
        u11 = np.sqrt(np.maximum(self.q11, 0.0))
        usafe = np.where(u11 > 0, u11, 1.0)
        u21 = np.where(u11 > 0, self.q12 / usafe, 0.0)
        self.u11, self.u21 = u11, u21
        self.u22 = np.sqrt(np.maximum(self.q22 - u21 ** 2, 0.0))

    def homogeneous(self, pos, vel):
        return self.m11 * pos + self.m12 * vel, self.m21 * pos + self.m22 * vel

    def particular(self, f0, f1):
        """Duhamel contribution for forcing interpolating f0 -> f1 on the step."""
        b = (f1 - f0) / self.dt
        dpos = f0 * self.j0 + b * (self.dt * self.j0 - self.j1)
        dvel = f0 * self.dD + b * self.j0
        return dpos, dvel

    def noise_from_increment(self, dB, zeta1, zeta2):
        """Exact-in-law stochastic forcing coupled to the Wiener increment dB."""
        n1 = (self.r1 / self.dt) * dB + self.l11 * zeta1
        n2 = (self.r2 / self.dt) * dB + self.l21 * zeta1 + self.l22 * zeta2
        return n1, n2

    def noise_free(self, zeta1, zeta2):
        """Exact-in-law stochastic forcing, no increment coupling."""
        return self.u11 * zeta1, self.u21 * zeta1 + self.u22 * zeta2


def stationary_pair_covariance(grid: SpectralGrid):
    """Stationary per-mode covariance of (psi, dpsi): diag(<n>^{-2}, 1).

    Lyapunov solution of the linear damped wave SDE with sqrt(2) white
    forcing; matches the Gaussian pair measure mu_1 x mu_0.
    """
    br2 = grid_geometry(grid)["bracket2"]
    return 1.0 / br2, np.ones_like(br2)
