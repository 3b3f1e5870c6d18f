"""Spectral calculus on symmetric positive-semidefinite matrices.

``f(A) = V f(diag(lam)) V^T`` for a scalar map ``f`` applied to the spectrum.
For PSD ``A <= B`` (Loewner order) and ``f`` continuous, increasing, with
``f(0) = 0``, ``Tr f(A) <= Tr f(B)``; the detectors rely on exactly this
trace inequality.

Eigendecompositions come from a compiled cyclic Jacobi solver.
"""
from __future__ import annotations

import math
from functools import partial
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable

import numpy as np
from numba import njit

from .errors import DimensionMismatch, DomainError, NotConverged, NotSymmetric
from .frames import PSD_EPS, SYMMETRY_RTOL, CovMatrix

MAX_SWEEPS = 100
OFF_TOL = 1e-12

_GRID = np.concatenate([[0.0], np.logspace(-6, 6, 241)])


@dataclass(frozen=True)
class MonotoneFn:
    """Scalar map ``[0, inf) -> [0, inf)`` with ``f(0) = 0``, continuous and increasing.

    The preconditions are checked numerically when the object is created.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    params: tuple = ()

    def __post_init__(self):
        f0 = float(self.func(np.zeros(1))[0])
        if f0 != 0.0:
            raise DomainError(f"{self.name}: f(0) = {f0}, expected 0")
        y = self.func(_GRID)
        if not np.all(np.isfinite(y)) or np.any(y < 0):
            raise DomainError(f"{self.name}: must map [0, inf) into [0, inf)")
        if not np.all(np.diff(y) > 0):
            raise DomainError(f"{self.name}: not strictly increasing on the check grid")
        h = 1e-7 * np.maximum(_GRID, 1e-6)
        jump = np.abs(self.func(_GRID + h) - y)
        if np.any(jump > 1e-4 * (1.0 + np.abs(y))):
            raise DomainError(f"{self.name}: discontinuity detected on the check grid")

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=np.float64))

    @property
    def is_identity(self) -> bool:
        return self.name == "identity"

    def describe(self) -> str:
        if not self.params:
            return self.name
        return self.name + "(" + ", ".join(f"{k}={v}" for k, v in self.params) + ")"


def _copy(x):
    return np.array(x, dtype=np.float64, copy=True)


def _pow(x, p):
    return np.power(x, p)


def _identity():
    return MonotoneFn("identity", _copy)


def _sqrt():
    return MonotoneFn("sqrt", np.sqrt)


def _log1p():
    return MonotoneFn("log1p", np.log1p)


def _power(p: float = 1.0):
    p = float(p)
    if not p > 0 or not math.isfinite(p):
        raise DomainError(f"power exponent must lie in (0, inf), got {p}")
    return MonotoneFn("power", partial(_pow, p=p), (("p", p),))


REGISTRY = MappingProxyType(
    {
        "identity": _identity,
        "sqrt": _sqrt,
        "power": _power,
        "log1p": _log1p,
    }
)
ALIASES = MappingProxyType({"log(1+x)": "log1p", "id": "identity"})

IDENTITY = _identity()


def make_fn(name: str = "identity", **params) -> MonotoneFn:
    """Instantiate a registered function, e.g. ``make_fn("power", p=0.5)``."""
    key = ALIASES.get(name, name)
    try:
        factory = REGISTRY[key]
    except KeyError:
        raise DomainError(f"unknown monotone function {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(**params)


def registered_fns() -> list[MonotoneFn]:
    """One instance of each registered function (``power`` at a few exponents)."""
    return [_identity(), _sqrt(), _log1p(), _power(0.5), _power(2.0), _power(3.0)]


# ---------------------------------------------------------------------------
# eigensolver


@dataclass(frozen=True)
class EigenDecomp:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def leading(self) -> np.ndarray:
        return self.eigenvectors[:, -1]


@njit(cache=True)
def _jacobi_core(a, max_sweeps, tol):
    # Classic cyclic-by-row Jacobi on a symmetric matrix, in place.
    n = a.shape[0]
    v = np.eye(n)
    target = tol * np.sqrt(np.sum(a * a))
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += a[i, j] * a[i, j]
        if np.sqrt(off) <= target:
            return v, sweep
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    return v, -1


def jacobi_eigh(a, max_sweeps: int = MAX_SWEEPS, tol: float = OFF_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of real symmetric matrices.

    ``a`` may be one ``(n, n)`` matrix or a stack ``(..., n, n)``. Sweeps run
    until the off-diagonal Frobenius norm is at most ``tol * ||A||_F``.

    Raises:
        NotSymmetric: ``a`` is not symmetric to relative tolerance 1e-12.
        NotConverged: more than ``max_sweeps`` sweeps were needed.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionMismatch(f"expected square matrices, got shape {a.shape}")
    n = a.shape[-1]
    at = np.swapaxes(a, -1, -2)
    scale = np.abs(a).max(axis=(-2, -1), initial=0.0)
    asym = np.abs(a - at).max(axis=(-2, -1), initial=0.0)
    if np.any(asym > SYMMETRY_RTOL * np.maximum(scale, np.finfo(float).tiny)):
        raise NotSymmetric("matrix is not symmetric")
    stack = np.ascontiguousarray(0.5 * (a + at)).reshape(-1, n, n)
    lam = np.empty(stack.shape[:2])
    vec = np.empty_like(stack)
    for b in range(stack.shape[0]):
        m = stack[b].copy()
        v, sweeps = _jacobi_core(m, max_sweeps, tol)
        if sweeps < 0:
            raise NotConverged(f"Jacobi did not converge in {max_sweeps} sweeps")
        d = np.diag(m).copy()
        order = np.argsort(d, kind="stable")
        lam[b] = d[order]
        vec[b] = v[:, order]
    return lam.reshape(a.shape[:-1]), vec.reshape(a.shape)


def _entries(A) -> np.ndarray:
    return A.entries if isinstance(A, CovMatrix) else np.asarray(A, dtype=np.float64)


def sym_eigen(A) -> EigenDecomp:
    """Eigendecomposition of a PSD matrix with rounding-level negatives clamped to zero.

    Raises:
        DomainError: an eigenvalue is below ``-1e-10 * Tr(A)``.
    """
    a = _entries(A)
    lam, vec = jacobi_eigh(a)
    floor = -PSD_EPS * max(float(np.trace(a)), 0.0)
    if lam.size and lam[0] < floor:
        raise DomainError(f"matrix is not PSD: eigenvalue {lam[0]:.3e} < {floor:.3e}")
    lam = np.maximum(lam, 0.0)
    lam.setflags(write=False)
    vec.setflags(write=False)
    return EigenDecomp(lam, vec)


def apply_fn(A, f: MonotoneFn) -> CovMatrix:
    """``V f(Lambda) V^T`` as a new covariance matrix."""
    a = _entries(A)
    n_vec = A.n_vectors if isinstance(A, CovMatrix) else 1
    if f.is_identity:
        sym_eigen(a)  # PSD validation only
        return CovMatrix.from_gram(a, n_vec)
    ed = sym_eigen(a)
    v = ed.eigenvectors
    out = (v * f(ed.eigenvalues)) @ v.T
    return CovMatrix.from_gram(0.5 * (out + out.T), n_vec)


def trace_fn(A, f: MonotoneFn, eig: EigenDecomp | None = None) -> float:
    """``Tr f(A) = sum_i f(lam_i)``. The identity map short-circuits to the diagonal sum."""
    a = _entries(A)
    if f.is_identity and eig is None:
        return float(np.trace(a))
    ed = eig if eig is not None else sym_eigen(a)
    return float(np.sum(f(ed.eigenvalues)))


def loewner_leq(A, B) -> bool:
    """True iff ``B - A`` is PSD up to ``1e-10 * Tr(B)``."""
    a, b = _entries(A), _entries(B)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    lam, _ = jacobi_eigh(b - a)
    return bool(lam[0] >= -PSD_EPS * abs(float(np.trace(b))))
