"""Counter-based random streams.

Every random draw in the package is keyed by (seed, stream, step, sample)
through a Philox bit generator, so results are independent of iteration
order, chunking and worker count.  Streams enumerate the independent
noise sources; step/sample index time steps and Monte-Carlo replicas.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1

# stream identifiers
MU = 1            # samples of the Gaussian measures mu_s
WIENER = 2        # cylindrical Wiener increments
WIENER_AUX = 3    # auxiliary Gaussians for the exact linear-SDE update
MALA = 4          # sampler proposal noise
MALA_ACCEPT = 5   # sampler accept/reject uniforms
DYN_OU = 6        # velocity OU substep noise (modes <= N)
DYN_HIGH = 7      # exact high-mode update noise
INIT = 8          # initial-data draws
DRIFT = 9         # optimizer path noise


def generator(seed: int, stream: int, step: int = 0, sample: int = 0) -> np.random.Generator:
    key = np.array([seed & _MASK, stream & _MASK], dtype=np.uint64)
    counter = np.array([0, 0, step & _MASK, sample & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def hermitian_unit_normal(grid, rng, batch=(), dtype=np.complex128) -> np.ndarray:
    """Hermitian complex Gaussian coefficients with E|z(n)|^2 = 1 per mode.

    The zero mode is real N(0,1); all other modes have independent real and
    imaginary parts of variance 1/2, conjugate-paired across n <-> -n.
    """
    L = grid.n_modes_axis
    shape = tuple(batch) + (L, L, L)
    real_dtype = np.float32 if dtype == np.complex64 else np.float64
    a = rng.standard_normal(shape, dtype=real_dtype)
    b = rng.standard_normal(shape, dtype=real_dtype)
    z = (a + 1j * b).astype(dtype, copy=False)
    from .spectral import hermitian_reflect
    # (z(n) + conj(z(-n)))/2: unit variance complex modes, real unit-variance zero mode
    return ((z + hermitian_reflect(z)) * np.array(0.5, dtype=real_dtype)).astype(dtype, copy=False)
