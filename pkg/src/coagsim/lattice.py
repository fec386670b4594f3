"""Composition-lattice geometry: enumeration, shell indexing, polar split.

Clusters are labelled by a composition vector alpha of d non-negative
integers (monomer counts per species).  The lattice holds every alpha with
1 <= |alpha| <= n_max where |alpha| = sum_j alpha_j; the origin is excluded.
Storage is dense and shell-ordered: entries are sorted by (|alpha|, lex),
so each size shell occupies one contiguous index span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "Composition",
    "PolarPoint",
    "LatticeIndex",
    "enumerate_lattice",
    "to_polar",
    "shell_sum",
]

#: Upper bound on dense enumeration, in bytes of one float64 per lattice
#: point.  Guards against accidental huge enumerations.
DEFAULT_MEMORY_BUDGET = 2 * 1024**3

_SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class Composition:
    """A cluster's make-up: monomer counts per species, origin excluded."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if len(counts) < 1:
            raise ValueError("composition needs at least one species")
        if any(c < 0 for c in counts):
            raise ValueError(f"composition {counts} has a negative count")
        if not any(counts):
            raise ValueError("composition must not be the origin")

    @property
    def d(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        """Total size |alpha| (the l1 norm)."""
        return sum(self.counts)

    def __add__(self, other: "Composition") -> "Composition":
        if self.d != other.d:
            raise ValueError("dimension mismatch in composition addition")
        return Composition(tuple(a + b for a, b in zip(self.counts, other.counts)))

    def __iter__(self):
        return iter(self.counts)


@dataclass(frozen=True)
class PolarPoint:
    """Polar split of a cluster: total size r and simplex direction theta."""

    r: float
    theta: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError(f"polar radius must be positive, got {self.r}")
        s = math.fsum(self.theta)
        if abs(s - 1.0) > _SIMPLEX_TOL:
            raise ValueError(f"direction weights sum to {s}, not 1")
        if any(t < 0 for t in self.theta):
            raise ValueError("direction weights must be non-negative")


class LatticeIndex:
    """Shell-ordered bijection between compositions and dense indices.

    Immutable after construction; safe to share across threads.  Index i
    maps to ``compositions[i]``; the inverse is :meth:`index_of`, computed
    combinatorially (no hash map) so it vectorizes over arrays.
    """

    def __init__(self, d: int, n_max: int, memory_budget: int = DEFAULT_MEMORY_BUDGET):
        if d is None or d < 1:
            raise ValueError(f"dimension must be >= 1, got {d}")
        if d > 3:
            raise ValueError(
                f"dense enumeration supports d <= 3, got d={d}"
            )
        if n_max is None or n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {n_max}")
        count = math.comb(n_max + d, d) - 1
        if count * 8 > memory_budget:
            raise ValueError(
                f"lattice too large: d={d}, n_max={n_max} needs {count} entries, "
                f"{count * 8} bytes of state exceeds the {memory_budget}-byte budget"
            )
        self.d = int(d)
        self.n_max = int(n_max)
        self.size = count
        # Shell s occupies [shell_starts[s], shell_starts[s+1]).
        starts = np.array(
            [math.comb(s + d, d) - 1 for s in range(0, n_max + 1)], dtype=np.int64
        )
        self.shell_starts = np.concatenate(([0], starts))
        self.compositions = self._build_compositions()
        self.sizes = self.compositions.sum(axis=1)
        self.compositions.setflags(write=False)
        self.sizes.setflags(write=False)
        self.shell_starts.setflags(write=False)

    def _build_compositions(self) -> np.ndarray:
        d, n_max = self.d, self.n_max
        out = np.empty((self.size, d), dtype=np.int64)
        pos = 0
        for s in range(1, n_max + 1):
            if d == 1:
                out[pos, 0] = s
                pos += 1
            elif d == 2:
                k = s + 1
                out[pos : pos + k, 0] = np.arange(k)
                out[pos : pos + k, 1] = s - np.arange(k)
                pos += k
            else:
                for a1 in range(s + 1):
                    k = s - a1 + 1
                    out[pos : pos + k, 0] = a1
                    out[pos : pos + k, 1] = np.arange(k)
                    out[pos : pos + k, 2] = s - a1 - np.arange(k)
                    pos += k
        assert pos == self.size
        return out

    def shell_range(self, s: int) -> range:
        """Contiguous index span of the compositions with |alpha| = s."""
        if not 1 <= s <= self.n_max:
            raise ValueError(f"shell {s} outside 1..{self.n_max}")
        return range(int(self.shell_starts[s]), int(self.shell_starts[s + 1]))

    def index_of(self, comps) -> np.ndarray:
        """Dense indices of compositions, vectorized; -1 for |alpha| > n_max.

        ``comps`` is an (n, d) integer array (or a single composition).
        Entries must be valid lattice points apart from oversize ones,
        which map to -1 (they live beyond the truncation).
        """
        arr = np.asarray(comps, dtype=np.int64)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.shape[1] != self.d:
            raise ValueError(f"expected d={self.d} columns, got {arr.shape[1]}")
        s = arr.sum(axis=1)
        if np.any(s < 1) or np.any(arr < 0):
            raise ValueError("compositions must be non-negative and exclude the origin")
        inside = s <= self.n_max
        idx = np.full(arr.shape[0], -1, dtype=np.int64)
        if np.any(inside):
            sa = s[inside]
            start = self._shell_start_of(sa)
            idx[inside] = start + self._lex_rank(arr[inside], sa)
        return (idx[0] if single else idx)

    def _shell_start_of(self, s: np.ndarray) -> np.ndarray:
        return self.shell_starts[s]

    def _lex_rank(self, arr: np.ndarray, s: np.ndarray) -> np.ndarray:
        d = self.d
        if d == 1:
            return np.zeros(len(arr), dtype=np.int64)
        if d == 2:
            return arr[:, 0]
        a1 = arr[:, 0]
        # Compositions before first coordinate a1: sum_{x<a1} (s - x + 1).
        return a1 * (s + 1) - a1 * (a1 - 1) // 2 + arr[:, 1]

    @cached_property
    def grid_shape(self) -> tuple[int, ...]:
        """Dense grid shape (n_max+1)^d used by convolution fast paths."""
        return (self.n_max + 1,) * self.d

    @cached_property
    def flat_indices(self) -> np.ndarray:
        """Flat positions of lattice points inside the dense grid."""
        return np.ravel_multi_index(tuple(self.compositions.T), self.grid_shape)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"LatticeIndex(d={self.d}, n_max={self.n_max}, size={self.size})"


def enumerate_lattice(
    d: int, n_max: int, memory_budget: int = DEFAULT_MEMORY_BUDGET
) -> LatticeIndex:
    """Enumerate the truncated composition lattice, shell-ordered."""
    return LatticeIndex(d, n_max, memory_budget=memory_budget)


def to_polar(alpha) -> PolarPoint:
    """Split alpha into total size r = |alpha| and direction theta = alpha/r."""
    counts = alpha.counts if isinstance(alpha, Composition) else tuple(alpha)
    r = sum(counts)
    if r <= 0 or any(c < 0 for c in counts):
        raise ValueError(f"invalid composition {counts}")
    return PolarPoint(r=float(r), theta=tuple(c / r for c in counts))


def shell_sum(state, lo: float, hi: float, weight: float = 0.0) -> float:
    """Weighted shell aggregate sum over lo <= |alpha| <= hi of |alpha|^q n_alpha.

    Shells beyond n_max contribute nothing (the caller decides whether that
    signals truncation).  ``weight`` is the size exponent q.
    """
    if not 0 < lo <= hi:
        raise ValueError(f"need 0 < lo <= hi, got lo={lo}, hi={hi}")
    lattice = state.lattice
    n = state.concentrations
    s_lo = max(1, math.ceil(lo - 1e-12))
    s_hi = min(lattice.n_max, math.floor(hi + 1e-12))
    if s_lo > s_hi:
        return 0.0
    i0 = int(lattice.shell_starts[s_lo])
    i1 = int(lattice.shell_starts[s_hi + 1])
    sizes = lattice.sizes[i0:i1]
    if weight == 0.0:
        return float(np.sum(n[i0:i1]))
    return float(np.sum(n[i0:i1] * np.power(sizes.astype(float), weight)))
