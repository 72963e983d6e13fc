"""Dense linear algebra and seeded randomness used by every other module.

Matrices and vectors are plain C-contiguous float64 ndarrays (row-major);
:func:`as_matrix` / :func:`as_vector` coerce and validate.  The SVD is a
one-sided Jacobi routine running on the active kernel backend.
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import _kernels
from .errors import ConvergenceError, NearZeroNormError

ZERO_NORM_EPS = 1e-12
SVD_MAX_SWEEPS = 100
SVD_MAX_DIM = 1024


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def as_vector(v, name: str = "vector") -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product with ascending-index accumulation, reproducible bit for bit.

    BLAS reorders partial sums, so ``a @ b`` can differ from a plain loop in
    the last ulp; here every output cell accumulates k rank-1 terms in index
    order, matching the naive triple loop exactly.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for p in range(a.shape[1]):
        out += a[:, p : p + 1] * b[p : p + 1, :]
    return out


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = as_vector(v)
    norm = float(np.sqrt(v @ v))
    if norm <= ZERO_NORM_EPS:
        raise NearZeroNormError(f"norm {norm:.3e} <= {ZERO_NORM_EPS}")
    return v / norm


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clipped into [-1, 1] against roundoff spill."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    nu = float(np.sqrt(u @ u))
    nv = float(np.sqrt(v @ v))
    if nu <= ZERO_NORM_EPS or nv <= ZERO_NORM_EPS:
        raise NearZeroNormError("cosine of a (near-)zero vector is undefined")
    return float(np.clip((u @ v) / (nu * nv), -1.0, 1.0))


def svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD via one-sided Jacobi: ``a = U @ diag(S) @ V.T``.

    For an m x n input with m >= n, U is m x n with orthonormal columns,
    S is length n, non-negative and descending, and V is n x n orthogonal.
    Inputs with m < n are handled by transposing.  Raises
    :class:`ConvergenceError` after ``SVD_MAX_SWEEPS`` sweeps.
    """
    a = as_matrix(a, "a")
    m, n = a.shape
    if max(m, n) > SVD_MAX_DIM:
        raise ValueError(f"svd supports at most {SVD_MAX_DIM}x{SVD_MAX_DIM}, got {a.shape}")
    if m < n:
        u, s, v = svd(a.T)
        return v, s, u

    g = a.copy()
    v = np.eye(n)
    sweeps = _kernels.jacobi_sweeps(g, v, SVD_MAX_SWEEPS, 1e-14)
    if sweeps < 0:
        raise ConvergenceError(f"Jacobi SVD did not converge in {SVD_MAX_SWEEPS} sweeps")

    norms = np.sqrt((g * g).sum(axis=0))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    v = v[:, order]
    g = g[:, order]

    u = np.zeros((m, n))
    tiny = max(m, n) * np.finfo(np.float64).eps * (s[0] if s[0] > 0 else 1.0)
    deficient = []
    for j in range(n):
        if s[j] > tiny:
            u[:, j] = g[:, j] / s[j]
        else:
            s[j] = 0.0
            deficient.append(j)
    for j in deficient:
        u[:, j] = _complete_orthonormal(u, j)
    return u, s, v


def _complete_orthonormal(u: np.ndarray, j: int) -> np.ndarray:
    """Deterministic unit vector orthogonal to the non-j columns of u."""
    m = u.shape[0]
    for k in range(m):
        cand = np.zeros(m)
        cand[k] = 1.0
        for _ in range(2):  # twice for numerical orthogonality
            cand -= u @ (u.T @ cand)
        norm = float(np.sqrt(cand @ cand))
        if norm > 0.5:
            return cand / norm
    raise ConvergenceError("failed to complete orthonormal basis")


class Rng:
    """Splittable counter-based random stream (Philox).

    A stream is identified by (seed, path); :meth:`split` derives an
    independent child stream, so the trainer, sampler, and generator can
    each own a deterministic stream from one run seed regardless of how
    many draws the others make.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    @staticmethod
    def _path_component(p: int | str) -> int:
        if isinstance(p, str):
            # stable across processes, unlike hash()
            return int.from_bytes(
                hashlib.blake2b(p.encode("utf-8"), digest_size=4).digest(), "little"
            )
        return int(p)

    def split(self, *path: int | str) -> "Rng":
        if not path:
            raise ValueError("split requires at least one path component")
        return Rng(self.seed, self.path + tuple(self._path_component(p) for p in path))

    def uniform(self, lo: float, hi: float) -> float:
        if not lo < hi:
            raise ValueError(f"invalid range [{lo}, {hi})")
        return float(self._gen.uniform(lo, hi))

    def uniform_array(self, lo: float, hi: float, shape) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"invalid range [{lo}, {hi})")
        return self._gen.uniform(lo, hi, size=shape)

    def normal_array(self, shape) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def integer(self, n: int) -> int:
        if n <= 0:
            raise ValueError("integer bound must be positive")
        return int(self._gen.integers(n))

    def integer_array(self, n: int, shape) -> np.ndarray:
        if n <= 0:
            raise ValueError("integer bound must be positive")
        return self._gen.integers(n, size=shape)

    def shuffled(self, x) -> np.ndarray:
        """Shuffled copy of an array, or a permutation of range(x) for int x."""
        return self._gen.permutation(x)

    def sample_indices(self, n: int, k: int) -> np.ndarray:
        """k distinct indices out of range(n), in draw order."""
        if k > n:
            raise ValueError(f"cannot sample {k} from {n}")
        return self._gen.choice(n, size=k, replace=False)


def rng_uniform(rng: Rng, lo: float, hi: float) -> float:
    return rng.uniform(lo, hi)
