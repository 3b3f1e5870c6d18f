"""Sensing vectors, sub-segments and sample covariance matrices.

A received real sample stream ``x[n]`` is cut into length-``L`` sensing
vectors ``x_i = [x[i], ..., x[i+L-1]]``. A sensing segment holds ``Ns``
vectors, split into ``K`` sub-segments of ``Nk`` vectors each. Vector ``j``
of a segment starts at sample ``start + j * vector_stride``; with the
default stride of one, consecutive vectors overlap in ``L - 1`` samples.

Sample files are either headerless little-endian float32 binaries (with an
optional ``<file>.meta`` sidecar of ``key=value`` lines carrying ``fs`` and
``label``) or plain text with one float per line.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided, sliding_window_view

from .errors import (
    DimensionMismatch,
    DomainError,
    EmptyInput,
    IndexOutOfRange,
    InsufficientSamples,
    NotSymmetric,
)

SYMMETRY_RTOL = 1e-12
PSD_EPS = 1e-10


class Origin(str, enum.Enum):
    NOISE_ONLY = "noise_only"
    SIGNAL_PLUS_NOISE = "signal_plus_noise"
    SIGNAL_ONLY = "signal_only"
    FILE = "file"


@dataclass(frozen=True)
class SensingConfig:
    """Frame geometry of one sensing segment.

    Attributes:
        L: smoothing factor, the length of every sensing vector.
        K: number of sub-segments per segment.
        Nk: number of vectors per sub-segment.
        fs: sample rate in samples/s. Carried as metadata only.
        vector_stride: samples between consecutive vector starts.
    """

    L: int = 32
    K: int = 166
    Nk: int = 600
    fs: float = 21.524476e6
    vector_stride: int = 1

    def __post_init__(self):
        if self.L < 2:
            raise DomainError(f"L must be >= 2, got {self.L}")
        if self.K < 2:
            raise DomainError(f"K must be >= 2, got {self.K}")
        if self.Nk < self.L:
            raise DomainError(f"Nk must be >= L ({self.L}), got {self.Nk}")
        if self.vector_stride < 1:
            raise DomainError(f"vector_stride must be >= 1, got {self.vector_stride}")

    @property
    def Ns(self) -> int:
        return self.K * self.Nk

    @classmethod
    def from_segment(cls, L: int, Ns: int, K: int, **kwargs) -> "SensingConfig":
        """Build a config from a total vector count, truncating ``Ns`` to a multiple of ``K``."""
        if K < 1:
            raise DomainError(f"K must be >= 1, got {K}")
        Nk = Ns // K
        if Nk * K != Ns:
            warnings.warn(
                f"Ns={Ns} is not divisible by K={K}; truncating to {Nk * K}",
                stacklevel=2,
            )
        return cls(L=L, K=K, Nk=Nk, **kwargs)

    def with_ns(self, Ns: int) -> "SensingConfig":
        """Same geometry with ``Nk`` kept and ``K = Ns // Nk`` sub-segments."""
        K = Ns // self.Nk
        if K * self.Nk != Ns:
            warnings.warn(
                f"Ns={Ns} is not a multiple of Nk={self.Nk}; using K={K} "
                f"({K * self.Nk} vectors)",
                stacklevel=2,
            )
        return SensingConfig(
            L=self.L, K=K, Nk=self.Nk, fs=self.fs, vector_stride=self.vector_stride
        )

    def samples_needed(self, n_vectors: int | None = None) -> int:
        """Stream length required to read ``n_vectors`` vectors from offset zero."""
        n = self.Ns if n_vectors is None else n_vectors
        return (n - 1) * self.vector_stride + self.L


@dataclass(frozen=True)
class SampleStream:
    samples: np.ndarray
    origin: Origin = Origin.FILE
    fs: float | None = None
    label: str = ""

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64, copy=True).ravel()
        if not np.all(np.isfinite(arr)):
            raise DomainError("sample stream contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "origin", Origin(self.origin))

    def __len__(self) -> int:
        return self.samples.size

    def scaled(self, c: float) -> "SampleStream":
        return SampleStream(self.samples * c, self.origin, self.fs, self.label)


@dataclass(frozen=True)
class CovMatrix:
    """Real symmetric positive-semidefinite ``L x L`` sample covariance."""

    entries: np.ndarray
    n_vectors: int = 1
    _checked: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"covariance must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DomainError("covariance contains NaN or Inf")
        scale = np.abs(a).max() if a.size else 0.0
        if np.abs(a - a.T).max(initial=0.0) > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
            raise NotSymmetric("covariance matrix is not symmetric")
        a = 0.5 * (a + a.T)
        if self._checked and a.size:
            tr = float(np.trace(a))
            if tr < 0:
                raise DomainError(f"covariance has negative trace {tr}")
            lam_min = float(np.linalg.eigvalsh(a)[0])
            if lam_min < -PSD_EPS * max(tr, 0.0):
                raise DomainError(f"covariance is not PSD (min eigenvalue {lam_min:.3e})")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @classmethod
    def from_gram(cls, entries: np.ndarray, n_vectors: int) -> "CovMatrix":
        # Gram matrices are PSD by construction; skip the eigenvalue check.
        return cls(entries, n_vectors, _checked=False)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def _as_array(stream) -> np.ndarray:
    if isinstance(stream, SampleStream):
        return stream.samples
    return np.asarray(stream, dtype=np.float64).ravel()


def _vector_view(x: np.ndarray, L: int, stride: int, start: int, count: int) -> np.ndarray:
    need = start + (count - 1) * stride + L
    if count < 1 or start < 0 or x.size < need:
        raise InsufficientSamples(
            f"need {need} samples for {count} vectors of length {L} "
            f"(stride {stride}, start {start}); stream has {x.size}"
        )
    return sliding_window_view(x, L)[start : start + (count - 1) * stride + 1 : stride]


def build_vectors(stream, cfg: SensingConfig, start: int = 0, count: int | None = None) -> np.ndarray:
    """Return ``count`` sensing vectors as rows of a read-only ``(count, L)`` view.

    ``count`` defaults to ``cfg.Ns``.
    """
    x = _as_array(stream)
    n = cfg.Ns if count is None else count
    return _vector_view(x, cfg.L, cfg.vector_stride, start, n)


def _available_vectors(n_samples: int, cfg: SensingConfig, start: int) -> int:
    if n_samples - start < cfg.L:
        return 0
    return (n_samples - start - cfg.L) // cfg.vector_stride + 1


def _segment_counts(x: np.ndarray, cfg: SensingConfig, start: int) -> list[int]:
    """Vector count per sub-segment; only the last one may come up short."""
    avail = _available_vectors(x.size, cfg, start)
    full_needed = (cfg.K - 1) * cfg.Nk + 1
    if avail < full_needed:
        raise InsufficientSamples(
            f"need at least {cfg.samples_needed(full_needed) + start} samples for "
            f"{cfg.K} sub-segments; stream has {x.size}"
        )
    last = min(cfg.Nk, avail - (cfg.K - 1) * cfg.Nk)
    return [cfg.Nk] * (cfg.K - 1) + [last]


def sub_segment_covariance(stream, cfg: SensingConfig, k: int, start: int = 0) -> CovMatrix:
    """Sample covariance ``(1/Nk) sum x_i x_i^T`` of sub-segment ``k`` (1-based)."""
    if not 1 <= k <= cfg.K:
        raise IndexOutOfRange(f"sub-segment index {k} outside 1..{cfg.K}")
    x = _as_array(stream)
    offset = start + (k - 1) * cfg.Nk * cfg.vector_stride
    count = cfg.Nk
    if k == cfg.K:
        count = min(cfg.Nk, _available_vectors(x.size, cfg, offset))
    X = _vector_view(x, cfg.L, cfg.vector_stride, offset, count)
    return CovMatrix.from_gram(_gram(X) / count, count)


def _gram(X: np.ndarray) -> np.ndarray:
    # BLAS needs contiguous operands; a strided window view falls back to a slow loop.
    Xc = np.ascontiguousarray(X)
    return Xc.T @ Xc


def _lagged_block_grams(x: np.ndarray, L: int, Nk: int, K: int) -> np.ndarray:
    """Unnormalised Gram matrices of K consecutive stride-1 blocks of Nk windows.

    Entry ``(i, i+d)`` of block ``k`` is a sum of lag-``d`` products
    ``x[m] x[m+d]`` over ``m`` in ``[k Nk + i, k Nk + i + Nk)``. Each block
    sum is corrected by short head sums, so the cost is O(K Nk L).
    """
    n = K * Nk
    out = np.empty((K, L, L))
    for d in range(L):
        p = x[: n + L - 1 - d] * x[d : n + L - 1]
        blocks = p[:n].reshape(K, Nk).sum(axis=1)
        w = L - 1 - d
        heads = np.zeros((K + 1, w + 1))
        if w:
            view = as_strided(p, shape=(K + 1, w), strides=(Nk * p.itemsize, p.itemsize), writeable=False)
            np.cumsum(view, axis=1, out=heads[:, 1:])
        vals = blocks[:, None] - heads[:-1] + heads[1:]
        i = np.arange(w + 1)
        out[:, i, i + d] = vals
        out[:, i + d, i] = vals
    return out


def sub_segment_covariances(stream, cfg: SensingConfig, start: int = 0) -> list[CovMatrix]:
    """All ``K`` sub-segment covariances of the segment starting at ``start``."""
    x = _as_array(stream)
    counts = _segment_counts(x, cfg, start)
    L, s, Nk = cfg.L, cfg.vector_stride, cfg.Nk
    full = cfg.K if counts[-1] == Nk else cfg.K - 1
    base = x[start:]
    if s == 1:
        grams = _lagged_block_grams(base, L, Nk, full) / Nk
    else:
        X = as_strided(
            base,
            shape=(full, Nk, L),
            strides=(Nk * s * x.itemsize, s * x.itemsize, x.itemsize),
            writeable=False,
        )
        X = np.ascontiguousarray(X)
        grams = np.matmul(X.transpose(0, 2, 1), X) / Nk
    out = [CovMatrix.from_gram(g, Nk) for g in grams]
    if full < cfg.K:
        out.append(sub_segment_covariance(x, cfg, cfg.K, start))
    return out


def sub_segment_traces(stream, cfg: SensingConfig, start: int = 0) -> np.ndarray:
    """``Tr(R_{x,k})`` for every sub-segment without forming the matrices.

    Each trace is the mean energy of the sub-segment's vectors, so only
    window energies of length ``L`` are needed.
    """
    x = _as_array(stream)
    counts = _segment_counts(x, cfg, start)
    n_vec = sum(counts)
    span = x[start : start + (n_vec - 1) * cfg.vector_stride + cfg.L]
    energy = np.convolve(span * span, np.ones(cfg.L), mode="valid")[:: cfg.vector_stride]
    energy = energy[:n_vec]
    edges = np.cumsum([0] + counts)
    return np.add.reduceat(energy, edges[:-1]) / np.asarray(counts, dtype=float)


def average_covariance(mats: Sequence[CovMatrix]) -> CovMatrix:
    """Entrywise mean of covariance matrices; ``n_vectors`` adds up."""
    mats = list(mats)
    if not mats:
        raise EmptyInput("no covariance matrices to average")
    dim = mats[0].dim
    if any(m.dim != dim for m in mats):
        raise DimensionMismatch("covariance matrices differ in dimension")
    mean = np.mean(np.stack([m.entries for m in mats]), axis=0)
    return CovMatrix.from_gram(mean, sum(m.n_vectors for m in mats))


def whole_segment_covariance(stream, cfg: SensingConfig, start: int = 0) -> CovMatrix:
    """Sample covariance over all vectors of the segment (``1/Ns`` normalisation)."""
    x = _as_array(stream)
    n_vec = sum(_segment_counts(x, cfg, start))
    if cfg.vector_stride == 1:
        g = _lagged_block_grams(x[start:], cfg.L, n_vec, 1)[0]
    else:
        g = _gram(_vector_view(x, cfg.L, cfg.vector_stride, start, n_vec))
    return CovMatrix.from_gram(g / n_vec, n_vec)


# ---------------------------------------------------------------------------
# sample files


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".meta")


def _is_text(path: Path, fmt: str | None) -> bool:
    if fmt is not None:
        if fmt not in ("text", "f32"):
            raise DomainError(f"unknown sample format {fmt!r}")
        return fmt == "text"
    return path.suffix.lower() in (".txt", ".csv", ".dat")


def read_samples(path, fmt: str | None = None) -> SampleStream:
    """Load a sample file. ``fmt`` is ``"f32"`` or ``"text"``; inferred from the suffix if omitted."""
    path = Path(path)
    if _is_text(path, fmt):
        data = np.loadtxt(path, dtype=np.float64, ndmin=1, comments="#")
    else:
        raw = path.read_bytes()
        if len(raw) % 4:
            raise DomainError(f"{path}: size {len(raw)} is not a multiple of 4 bytes")
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    fs = None
    label = ""
    meta = _sidecar(path)
    if meta.exists():
        for line in meta.read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "fs":
                fs = float(value)
            elif key == "label":
                label = value
    return SampleStream(data, Origin.FILE, fs=fs, label=label)


def write_samples(path, stream, fmt: str | None = None, fs: float | None = None, label: str = "") -> Path:
    path = Path(path)
    x = _as_array(stream)
    if isinstance(stream, SampleStream):
        fs = stream.fs if fs is None else fs
        label = label or stream.label
    if _is_text(path, fmt):
        np.savetxt(path, x, fmt="%.9g")
    else:
        path.write_bytes(x.astype("<f4").tobytes())
        if fs is not None or label:
            lines = []
            if fs is not None and math.isfinite(fs):
                lines.append(f"fs={fs!r}")
            if label:
                lines.append(f"label={label}")
            _sidecar(path).write_text("\n".join(lines) + "\n")
    return path
