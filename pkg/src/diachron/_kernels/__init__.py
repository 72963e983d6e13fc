"""Kernel backend selection.

The hot loops (batch projection forward/backward, triplet accumulation,
Jacobi SVD sweeps) exist twice: a compiled Cython core and a NumPy
reference.  Which one wins differs by kernel: the serial, branch-heavy
loops (triplet accumulation, Jacobi rotations) are an order of magnitude
faster compiled, while the dense layer products are fastest left to the
BLAS behind NumPy (see ``benchmarks/bench_kernels.py``).

The default ``auto`` mode therefore routes each kernel to its measured
winner.  The environment variable ``DIACHRON_BACKEND`` (``auto`` |
``compiled`` | ``python``) or :func:`set_backend` forces one backend for
everything, which is what the parity tests and the benchmark use.  All
routes are deterministic; the two cores agree to floating-point roundoff,
not bit-for-bit.
"""

from __future__ import annotations

import os

from . import pyref

try:
    from . import _core  # type: ignore[attr-defined]
except ImportError:
    _core = None

_BACKENDS = {"python": pyref}
if _core is not None:
    _BACKENDS["compiled"] = _core

# measured per-kernel winners for auto mode; compiled pays off exactly where
# the work cannot be phrased as a handful of large matrix products
_AUTO_ROUTE = {
    "forward_pair": "python",
    "backward_pair": "python",
    "accumulate_triplets": "compiled",
    "jacobi_sweeps": "compiled",
}

_mode = "python"


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    if name not in ("auto", *_BACKENDS):
        raise ValueError(
            f"unknown backend {name!r}; available: "
            f"{['auto', *available_backends()]}"
        )
    global _mode
    _mode = name


def active_backend_name() -> str:
    return _mode


def kernel_backends() -> dict[str, str]:
    """The backend each kernel resolves to under the current mode."""
    return {kernel: _resolve(kernel) for kernel in _AUTO_ROUTE}


def _resolve(kernel: str) -> str:
    if _mode != "auto":
        return _mode
    preferred = _AUTO_ROUTE[kernel]
    return preferred if preferred in _BACKENDS else "python"


def jacobi_sweeps(g, v, max_sweeps, tol):
    return _BACKENDS[_resolve("jacobi_sweeps")].jacobi_sweeps(
        g, v, max_sweeps, tol
    )


def forward_pair(*args):
    return _BACKENDS[_resolve("forward_pair")].forward_pair(*args)


def accumulate_triplets(*args):
    return _BACKENDS[_resolve("accumulate_triplets")].accumulate_triplets(*args)


def backward_pair(*args):
    return _BACKENDS[_resolve("backward_pair")].backward_pair(*args)


set_backend(os.environ.get("DIACHRON_BACKEND", "auto"))
