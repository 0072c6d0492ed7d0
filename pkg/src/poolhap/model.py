"""
Core data model: haplotype encoding, configuration matrices and pooled
observations.

Haplotypes are plain strings over ``{'0', '1'}`` (0 = major allele,
1 = minor allele). A configuration matrix ``A`` maps the latent haplotype
counts ``z`` of a pool to its observed counts through ``y = A z``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import DataInconsistencyError

__all__ = [
    "ConfigurationMatrix",
    "PoolObservation",
    "Dataset",
    "all_haplotypes",
    "validate_haplotypes",
    "build_allele_count_matrix",
    "build_subset_matrix",
    "partial_haplotype_members",
    "preprocess",
    "rational_rank",
    "independent_rows",
    "check_latent_counts",
    "check_frequencies",
]


def validate_haplotypes(haplotypes: Iterable[str]) -> list[str]:
    """Check that haplotypes are distinct binary strings of equal length."""
    haps = [str(h).strip() for h in haplotypes]
    if not haps:
        raise ValueError("haplotype list is empty")
    M = len(haps[0])
    for h in haps:
        if len(h) != M:
            raise ValueError(f"ragged haplotype lengths: {haps[0]!r} vs {h!r}")
        if M == 0 or set(h) - {"0", "1"}:
            raise ValueError(f"haplotype {h!r} is not a non-empty binary string")
    if len(set(haps)) != len(haps):
        dup = [h for h in haps if haps.count(h) > 1][0]
        raise ValueError(f"duplicate haplotype {dup!r}")
    return haps


def all_haplotypes(M: int) -> list[str]:
    """All ``2**M`` haplotypes over ``M`` markers.

    The first marker varies fastest, so for ``M=2`` the order is
    ``00, 10, 01, 11``.
    """
    if M < 1:
        raise ValueError("M must be positive")
    return ["".join(bits[::-1]) for bits in itertools.product("01", repeat=M)]


# ---------------------------------------------------------------------------
# exact rational linear algebra


def _eliminate(rows: Sequence[Sequence], n_pivot_cols: int):
    """Incremental Gaussian elimination over the rationals.

    Rows are processed in order; a row is kept when its first
    ``n_pivot_cols`` entries are independent of the rows kept before it.
    Returns the kept indices and, for every dropped row, the residual of the
    trailing (non-pivot) entries after reduction.
    """
    basis: list[tuple[int, list[Fraction]]] = []
    kept, residuals = [], {}
    for idx, row in enumerate(rows):
        v = [Fraction(int(x)) for x in row]
        for piv, b in basis:
            c = v[piv]
            if c:
                v = [vi - c * bi for vi, bi in zip(v, b)]
        piv = next((j for j in range(n_pivot_cols) if v[j] != 0), None)
        if piv is None:
            residuals[idx] = v[n_pivot_cols:]
            continue
        c = v[piv]
        basis.append((piv, [vi / c for vi in v]))
        kept.append(idx)
    return kept, residuals


def independent_rows(mat) -> list[int]:
    """Indices of the earliest maximal set of linearly independent rows."""
    mat = np.asarray(mat)
    if mat.size == 0:
        return []
    kept, _ = _eliminate(mat.tolist(), mat.shape[1])
    return kept


def rational_rank(mat) -> int:
    """Exact rank of an integer matrix."""
    return len(independent_rows(mat))


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True, eq=False)
class ConfigurationMatrix:
    """Binary ``R x H`` matrix linking latent counts to observed counts."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.int64)
        if a.ndim != 2:
            raise ValueError("configuration matrix must be two-dimensional")
        if a.size and not np.isin(a, (0, 1)).all():
            raise ValueError("configuration matrix entries must be 0 or 1")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def R(self) -> int:
        return self.entries.shape[0]

    @property
    def H(self) -> int:
        return self.entries.shape[1]

    @cached_property
    def sum_row_index(self) -> int | None:
        full = np.flatnonzero(self.entries.all(axis=1)) if self.R else []
        return int(full[0]) if len(full) else None

    @property
    def has_sum_row(self) -> bool:
        return self.sum_row_index is not None

    @cached_property
    def row_rank(self) -> int:
        return rational_rank(self.entries)

    @property
    def full_row_rank(self) -> bool:
        return self.row_rank == self.R

    @cached_property
    def key(self) -> bytes:
        return np.array(self.shape).tobytes() + self.entries.tobytes()

    def __eq__(self, other):
        if not isinstance(other, ConfigurationMatrix):
            return NotImplemented
        return self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        rows = ", ".join("(" + ",".join(map(str, r)) + ")" for r in self.entries)
        return f"ConfigurationMatrix([{rows}])"


def build_allele_count_matrix(haplotypes: Sequence[str], with_sum_row: bool = False) -> ConfigurationMatrix:
    """Allele-count configuration matrix.

    Row ``m`` column ``h`` is the allele of haplotype ``h`` at marker ``m``;
    with ``with_sum_row`` an all-ones row is prepended.
    """
    haps = validate_haplotypes(haplotypes)
    a = np.array([[int(c) for c in h] for h in haps], dtype=np.int64).T
    if with_sum_row:
        a = np.vstack([np.ones(len(haps), dtype=np.int64), a])
    return ConfigurationMatrix(a)


def build_subset_matrix(haplotypes: Sequence[str], subsets: Sequence[Iterable[int]],
                        with_sum_row: bool = False) -> ConfigurationMatrix:
    """Configuration matrix whose row ``r`` indicates the haplotypes in ``subsets[r]``."""
    haps = validate_haplotypes(haplotypes)
    if not len(subsets):
        raise ValueError("subset list is empty")
    H = len(haps)
    a = np.zeros((len(subsets), H), dtype=np.int64)
    for r, subset in enumerate(subsets):
        for h in subset:
            if not 0 <= int(h) < H:
                raise ValueError(f"subset index {h} out of range for H={H}")
            a[r, int(h)] = 1
    if with_sum_row:
        a = np.vstack([np.ones(H, dtype=np.int64), a])
    return ConfigurationMatrix(a)


def partial_haplotype_members(haplotypes: Sequence[str], pattern: str) -> list[int]:
    """Indices of haplotypes matching a partial haplotype such as ``'?01'``."""
    haps = validate_haplotypes(haplotypes)
    if len(pattern) != len(haps[0]):
        raise ValueError("pattern length differs from haplotype length")
    return [i for i, h in enumerate(haps)
            if all(p == "?" or p == c for p, c in zip(pattern, h))]


def preprocess(matrix: ConfigurationMatrix, counts, size: int) -> tuple[ConfigurationMatrix, np.ndarray]:
    """Absorb the pool size as an all-ones row and drop redundant rows.

    The sum row is placed first and always retained; the remaining rows are
    kept greedily in their original order when independent of the rows kept
    before them. Counts of dropped rows must be implied by the kept rows.

    Raises
    ------
    DataInconsistencyError
        If a dropped row's count contradicts the retained rows.
    """
    a = np.asarray(matrix.entries, dtype=np.int64)
    y = np.asarray(counts, dtype=np.int64).ravel()
    if len(y) != a.shape[0]:
        raise ValueError(f"counts length {len(y)} != matrix rows {a.shape[0]}")
    size = int(size)
    H = a.shape[1]
    rows = [np.ones(H, dtype=np.int64)] + list(a)
    vals = [size] + list(y)
    aug = [list(r) + [v] for r, v in zip(rows, vals)]
    kept, residuals = _eliminate(aug, H)
    for idx, res in residuals.items():
        if res[0] != 0:
            where = "pool size" if idx == 0 else f"row {idx - 1}"
            raise DataInconsistencyError(
                f"observed count of {where} ({vals[idx]}) is inconsistent with the other rows")
    out = ConfigurationMatrix(np.array([rows[i] for i in kept], dtype=np.int64).reshape(len(kept), H))
    return out, np.array([vals[i] for i in kept], dtype=np.int64)


def check_latent_counts(matrix, counts, z, size=None) -> bool:
    """True when ``z`` is a nonnegative integer solution of ``A z = y``."""
    a = matrix.entries if isinstance(matrix, ConfigurationMatrix) else np.asarray(matrix)
    z = np.asarray(z)
    if np.any(z < 0) or not np.array_equal(z, np.round(z)):
        return False
    if size is not None and z.sum() != size:
        return False
    return bool(np.array_equal(a @ z.astype(np.int64), np.asarray(counts)))


def check_frequencies(p, atol: float = 1e-12) -> bool:
    p = np.asarray(p, dtype=float)
    return bool(np.all(p >= 0) and abs(p.sum() - 1.0) <= atol)


@dataclass(frozen=True, eq=False)
class PoolObservation:
    """Observed counts of one pool.

    ``counts`` follow the rows of ``matrix`` (which need not contain the sum
    row). ``covariate`` holds e.g. the sampling time of the pool.
    """

    pool_id: str
    size: int
    counts: np.ndarray
    matrix: ConfigurationMatrix
    covariate: np.ndarray | None = None

    def __post_init__(self):
        y = np.array(self.counts, dtype=np.int64).ravel()
        y.setflags(write=False)
        object.__setattr__(self, "counts", y)
        object.__setattr__(self, "size", int(self.size))
        object.__setattr__(self, "pool_id", str(self.pool_id))
        if self.covariate is not None:
            x = np.atleast_1d(np.array(self.covariate, dtype=float))
            x.setflags(write=False)
            object.__setattr__(self, "covariate", x)
        if len(y) != self.matrix.R:
            raise ValueError(f"pool {self.pool_id}: {len(y)} counts for {self.matrix.R} matrix rows")
        if self.size < 0 or np.any(y < 0) or np.any(y > self.size):
            raise ValueError(f"pool {self.pool_id}: counts must lie in [0, size]")
        s = self.matrix.sum_row_index
        if s is not None and y[s] != self.size:
            raise DataInconsistencyError(f"pool {self.pool_id}: sum-row count {y[s]} != size {self.size}")

    @cached_property
    def reduced(self) -> tuple[ConfigurationMatrix, np.ndarray]:
        """Preprocessed full-row-rank system (matrix with sum row, counts)."""
        return preprocess(self.matrix, self.counts, self.size)


@dataclass(frozen=True)
class Dataset:
    """Input haplotypes together with the pooled observations."""

    haplotypes: tuple[str, ...]
    pools: tuple[PoolObservation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        haps = tuple(validate_haplotypes(self.haplotypes))
        object.__setattr__(self, "haplotypes", haps)
        object.__setattr__(self, "pools", tuple(self.pools))
        H, M = len(haps), len(haps[0])
        if not 2 <= H <= 2 ** M:
            raise ValueError(f"need 2 <= H <= 2^M, got H={H}, M={M}")
        for pool in self.pools:
            if pool.matrix.H != H:
                raise ValueError(f"pool {pool.pool_id}: matrix has {pool.matrix.H} columns, expected {H}")

    @property
    def H(self) -> int:
        return len(self.haplotypes)

    @property
    def marker_count(self) -> int:
        return len(self.haplotypes[0])

    @property
    def N(self) -> int:
        return len(self.pools)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([p.size for p in self.pools], dtype=np.int64)

    def covariates(self) -> np.ndarray:
        """Covariates stacked as an ``(N, d)`` array."""
        if any(p.covariate is None for p in self.pools):
            raise ValueError("every pool needs a covariate")
        return np.vstack([p.covariate for p in self.pools])
