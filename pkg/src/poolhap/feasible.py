"""
Feasible sets of latent counts and the exact latent multinomial likelihood.

The feasible set of a pool is every nonnegative integer ``z`` with
``A z = y``, where ``A`` is a full-row-rank 0-1 matrix containing the
all-ones row (so that ``sum(z) = n``). It is enumerated with a depth-first
branch-and-bound search: ``H - R`` free coordinates are branched on with
running lower/upper bounds, and the remaining ``R`` coordinates are solved
from an exactly inverted ``R x R`` block.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from numba import njit
from scipy.special import gammaln, logsumexp, xlogy

from .errors import (BoundaryError, EnumerationOverflowError,
                     InfeasibleSystemError)
from .model import ConfigurationMatrix, independent_rows, preprocess

__all__ = [
    "VariableBounds",
    "FeasibleSet",
    "preliminary_bounds",
    "tighten_bounds",
    "enumerate_feasible",
    "find_feasible_point",
    "exact_log_likelihood",
    "exact_log_likelihood_gradient",
    "expected_counts",
    "ExactLikelihood",
    "export_feasible_set",
    "import_feasible_set",
]

DEFAULT_MAX_SOLUTIONS = 10 ** 7
DEFAULT_MAX_SECONDS = 60.0

_DONE, _FULL, _PAUSED = 0, 1, 2


@dataclass(frozen=True)
class VariableBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=np.int64))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=np.int64))

    def contains(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        return np.all((z >= self.lower) & (z <= self.upper), axis=1)


@dataclass(frozen=True, eq=False)
class FeasibleSet:
    """All solutions of a pool's system, one per row of ``solutions``."""

    solutions: np.ndarray
    matrix: ConfigurationMatrix
    counts: np.ndarray
    size: int

    def __post_init__(self):
        z = np.asarray(self.solutions, dtype=np.int64).reshape(-1, self.matrix.H)
        z.setflags(write=False)
        object.__setattr__(self, "solutions", z)
        object.__setattr__(self, "counts", np.asarray(self.counts, dtype=np.int64))
        object.__setattr__(self, "size", int(self.size))

    def __len__(self):
        return len(self.solutions)

    def as_set(self) -> set[tuple[int, ...]]:
        return {tuple(int(v) for v in row) for row in self.solutions}

    @property
    def log_multinomial_coefs(self) -> np.ndarray:
        return gammaln(self.size + 1) - gammaln(self.solutions + 1).sum(axis=1)


def _reduce(matrix, counts, size):
    a, y = preprocess(matrix, counts, size)
    return a, y, int(size)


def preliminary_bounds(matrix: ConfigurationMatrix, counts, size: int) -> VariableBounds:
    """Bounds ``0 <= z_h <= min_r (y_r if a_rh = 1 else n - y_r)``."""
    a = np.asarray(matrix.entries, dtype=np.int64)
    y = np.asarray(counts, dtype=np.int64)[:, None]
    per_row = np.where(a == 1, y, int(size) - y)
    upper = per_row.min(axis=0) if len(a) else np.full(a.shape[1], int(size))
    upper = np.minimum(upper, int(size))
    return VariableBounds(np.zeros(a.shape[1], dtype=np.int64), upper)


def _integer_inverse(block: np.ndarray) -> tuple[np.ndarray, int]:
    """Adjugate and determinant of a nonsingular integer matrix (det > 0)."""
    R = block.shape[0]
    m = [[Fraction(int(x)) for x in row] + [Fraction(int(i == j)) for j in range(R)]
         for i, row in enumerate(block)]
    det = Fraction(1)
    for c in range(R):
        piv = next(r for r in range(c, R) if m[r][c] != 0)
        if piv != c:
            m[c], m[piv] = m[piv], m[c]
            det = -det
        pv = m[c][c]
        det *= pv
        m[c] = [v / pv for v in m[c]]
        for r in range(R):
            if r != c and m[r][c] != 0:
                f = m[r][c]
                m[r] = [vr - f * vc for vr, vc in zip(m[r], m[c])]
    d = int(det)
    adj = np.array([[int(v * det) for v in row[R:]] for row in m], dtype=np.int64)
    if d < 0:
        d, adj = -d, -adj
    return adj, d


@njit(cache=True)
def _bnb_run(a, adjA, det, l, u, h0, cur, zmax, zf, U1, U0, L1, L0, part, out, n_out, node_budget):
    """Resumable depth-first search over the free coordinates.

    ``a`` is the column-permuted matrix whose last R columns are the solved
    block. State arrays are modified in place. Returns (status, h, n_out).
    """
    R, H = a.shape
    F = H - R
    cap = out.shape[0]
    h = h0
    nodes = 0
    while h >= 0:
        if nodes >= node_budget:
            return 2, h, n_out
        if cur[h] > zmax[h]:
            h -= 1
            if h >= 0:
                cur[h] += 1
            continue
        v = cur[h]
        nodes += 1
        if h == F - 1:
            ok = True
            for r in range(R):
                num = part[h, r] - v * adjA[r, h]
                if num < 0 or num % det != 0:
                    ok = False
                    break
                zt = num // det
                if zt < l[F + r] or zt > u[F + r]:
                    ok = False
                    break
            if ok:
                if n_out >= cap:
                    return 1, h, n_out
                for k in range(h):
                    out[n_out, k] = zf[k]
                out[n_out, h] = v
                for r in range(R):
                    out[n_out, F + r] = (part[h, r] - v * adjA[r, h]) // det
                n_out += 1
            cur[h] += 1
        else:
            zf[h] = v
            lo = l[h + 1]
            hi = u[h + 1]
            for r in range(R):
                arh = a[r, h]
                arn = a[r, h + 1]
                U1[h + 1, r] = U1[h, r] - arh * v + arn * l[h + 1]
                U0[h + 1, r] = U0[h, r] - (1 - arh) * v + (1 - arn) * l[h + 1]
                L1[h + 1, r] = L1[h, r] - arh * v + arn * u[h + 1]
                L0[h + 1, r] = L0[h, r] - (1 - arh) * v + (1 - arn) * u[h + 1]
                part[h + 1, r] = part[h, r] - adjA[r, h] * v
                if arn == 1:
                    lo = max(lo, L1[h + 1, r])
                    hi = min(hi, U1[h + 1, r])
                else:
                    lo = max(lo, L0[h + 1, r])
                    hi = min(hi, U0[h + 1, r])
            h += 1
            cur[h] = lo
            zmax[h] = hi
    return 0, h, n_out


class _Search:
    """Column permutation and exact inverse shared by searches on one system."""

    def __init__(self, a: np.ndarray, y: np.ndarray, n: int, order: str = "fixed", bounds=None):
        R, H = a.shape
        self.R, self.H, self.n = R, H, n
        self.y = y
        tail = independent_rows(a.T)
        if len(tail) != R:
            raise ValueError("matrix is not of full row rank")
        free = [h for h in range(H) if h not in set(tail)]
        if order == "gap" and bounds is not None:
            gap = bounds.upper - bounds.lower
            free = sorted(free, key=lambda h: (-gap[h], h))
        elif order != "fixed":
            raise ValueError(f"unknown branching order {order!r}")
        self.perm = np.array(free + list(tail), dtype=np.int64)
        self.inv_perm = np.argsort(self.perm)
        self.a = np.ascontiguousarray(a[:, self.perm])
        F = H - R
        self.F = F
        self.adj, self.det = _integer_inverse(self.a[:, F:])
        self.adjA = np.ascontiguousarray(self.adj @ self.a[:, :F]) if F else np.zeros((R, 0), np.int64)
        self.adj_y = self.adj @ y

    def run(self, bounds: VariableBounds, max_solutions: int, max_seconds: float | None,
            first_only: bool = False) -> np.ndarray:
        l = np.ascontiguousarray(bounds.lower[self.perm])
        u = np.ascontiguousarray(bounds.upper[self.perm])
        if np.any(l > u):
            return np.zeros((0, self.H), dtype=np.int64)
        R, H, F, n = self.R, self.H, self.F, self.n
        if F == 0:
            num = self.adj_y
            if np.all(num >= 0) and np.all(num % self.det == 0):
                z = num // self.det
                if np.all(z >= l) and np.all(z <= u):
                    return z[self.inv_perm][None, :].astype(np.int64)
            return np.zeros((0, H), dtype=np.int64)

        a, y = self.a, self.y
        # running bounds at the first level
        U1 = np.zeros((F, R), np.int64)
        U0 = np.zeros((F, R), np.int64)
        L1 = np.zeros((F, R), np.int64)
        L0 = np.zeros((F, R), np.int64)
        rest = slice(1, H)
        U1[0] = y - a[:, rest] @ l[rest]
        U0[0] = n - y - (1 - a[:, rest]) @ l[rest]
        L1[0] = y - a[:, rest] @ u[rest]
        L0[0] = n - y - (1 - a[:, rest]) @ u[rest]
        part = np.zeros((F, R), np.int64)
        part[0] = self.adj_y
        cur = np.zeros(F, np.int64)
        zmax = np.zeros(F, np.int64)
        zf = np.zeros(F, np.int64)
        a0 = a[:, 0]
        cur[0] = max(l[0], np.max(np.where(a0 == 1, L1[0], L0[0])))
        zmax[0] = min(u[0], np.min(np.where(a0 == 1, U1[0], U0[0])))

        limit = 1 if first_only else max_solutions + 1
        cap = min(limit, 4096)
        out = np.zeros((cap, H), np.int64)
        n_out, h = 0, 0
        t0 = time.perf_counter()
        while True:
            status, h, n_out = _bnb_run(a, self.adjA, self.det, l, u, h, cur, zmax, zf,
                                        U1, U0, L1, L0, part, out, n_out, 200_000)
            if status == _DONE:
                break
            if status == _FULL:
                if n_out >= limit:
                    break
                grown = np.zeros((min(limit, 4 * len(out)), H), np.int64)
                grown[:n_out] = out[:n_out]
                out = grown
            elapsed = time.perf_counter() - t0
            if max_seconds is not None and elapsed > max_seconds:
                raise EnumerationOverflowError(
                    f"feasible-set enumeration exceeded {max_seconds:g} s after {n_out} solutions; "
                    "use latent count sampling (--method latent) or the normal approximation "
                    "(--method approx) instead", n_found=n_out, elapsed=elapsed)
        if not first_only and n_out > max_solutions:
            raise EnumerationOverflowError(
                f"feasible set has more than {max_solutions} solutions; use latent count sampling "
                "(--method latent) or the normal approximation (--method approx) instead",
                n_found=n_out, elapsed=time.perf_counter() - t0)
        return out[:n_out][:, self.inv_perm]


def enumerate_feasible(matrix: ConfigurationMatrix, counts, size: int, bounds: VariableBounds | None = None,
                       *, max_solutions: int = DEFAULT_MAX_SOLUTIONS,
                       max_seconds: float | None = DEFAULT_MAX_SECONDS,
                       tighten: bool = False, order: str = "fixed") -> FeasibleSet:
    """Enumerate every nonnegative integer solution of ``A z = y``.

    The system is preprocessed first (sum row added, redundant rows
    removed), so raw allele-count matrices are accepted.

    Parameters
    ----------
    bounds : VariableBounds, optional
        Bounds on each coordinate; defaults to :func:`preliminary_bounds`.
    max_solutions, max_seconds
        Budget; exceeding either raises :class:`EnumerationOverflowError`.
    tighten : bool
        Replace the bounds with exact per-coordinate extrema first.
    order : {'fixed', 'gap'}
        Branch on free coordinates in column order, or by decreasing bound gap.
    """
    a, y, n = _reduce(matrix, counts, size)
    if bounds is None:
        bounds = preliminary_bounds(a, y, n)
    if tighten:
        try:
            bounds = tighten_bounds(a, y, n, bounds)
        except InfeasibleSystemError:
            return FeasibleSet(np.zeros((0, a.H), np.int64), a, y, n)
    search = _Search(a.entries, y, n, order=order, bounds=bounds)
    sols = search.run(bounds, max_solutions, max_seconds)
    return FeasibleSet(sols, a, y, n)


def find_feasible_point(matrix: ConfigurationMatrix, counts, size: int) -> np.ndarray:
    """First solution found by the depth-first search.

    Raises
    ------
    InfeasibleSystemError
        If the system has no nonnegative integer solution.
    """
    a, y, n = _reduce(matrix, counts, size)
    search = _Search(a.entries, y, n)
    sols = search.run(preliminary_bounds(a, y, n), 1, None, first_only=True)
    if not len(sols):
        raise InfeasibleSystemError(f"no nonnegative integer solution for counts {list(y)}")
    return sols[0]


def tighten_bounds(matrix: ConfigurationMatrix, counts, size: int,
                   bounds: VariableBounds | None = None) -> VariableBounds:
    """Exact minimum and maximum of every coordinate over the feasible set.

    Each extremum is found by scanning candidate values from the current
    bound inwards and asking the search for a single solution with the
    coordinate pinned.
    """
    a, y, n = _reduce(matrix, counts, size)
    if bounds is None:
        bounds = preliminary_bounds(a, y, n)
    search = _Search(a.entries, y, n)
    lower, upper = bounds.lower.copy(), bounds.upper.copy()

    def feasible_with(h, v):
        lo, hi = lower.copy(), upper.copy()
        lo[h] = hi[h] = v
        return len(search.run(VariableBounds(lo, hi), 1, None, first_only=True)) > 0

    for h in range(a.H):
        v = upper[h]
        while v >= lower[h] and not feasible_with(h, v):
            v -= 1
        if v < lower[h]:
            raise InfeasibleSystemError(f"no nonnegative integer solution for counts {list(y)}")
        upper[h] = v
        v = lower[h]
        while not feasible_with(h, v):
            v += 1
        lower[h] = v
    return VariableBounds(lower, upper)


# ---------------------------------------------------------------------------
# likelihood


def _log_terms(fset: FeasibleSet, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        return fset.log_multinomial_coefs + xlogy(fset.solutions, p).sum(axis=1)


def exact_log_likelihood(fset: FeasibleSet, p) -> float:
    """Log probability of the pool's counts, summing multinomial terms over the fiber."""
    if not len(fset):
        return -np.inf
    terms = _log_terms(fset, p)
    if np.all(terms == -np.inf):
        return -np.inf
    return float(logsumexp(terms))


def expected_counts(fset: FeasibleSet, p) -> np.ndarray:
    """Conditional expectation of the latent counts given the observed counts."""
    terms = _log_terms(fset, p)
    w = np.exp(terms - logsumexp(terms))
    return w @ fset.solutions


def exact_log_likelihood_gradient(fset: FeasibleSet, p) -> np.ndarray:
    """Gradient ``E[z_h | y, p] / p_h`` of the exact log-likelihood.

    Raises
    ------
    BoundaryError
        If ``p`` has a zero entry.
    """
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise BoundaryError("gradient of the exact likelihood is undefined on the simplex boundary")
    return expected_counts(fset, p) / p


class ExactLikelihood:
    """Vectorised exact log-likelihood over many pools.

    Pools with identical reduced systems share one feasible set. All
    solutions are stacked into one array so that evaluating every pool is a
    single matrix product followed by segment-wise log-sum-exp.
    """

    def __init__(self, fsets: list[FeasibleSet], weights=None):
        if not fsets:
            raise ValueError("no feasible sets")
        for fs in fsets:
            if not len(fs):
                raise InfeasibleSystemError("a pool has an empty feasible set")
        self.weights = np.ones(len(fsets)) if weights is None else np.asarray(weights, float)
        self.Z = np.vstack([fs.solutions for fs in fsets]).astype(float)
        self.coef = np.concatenate([fs.log_multinomial_coefs for fs in fsets])
        lengths = np.array([len(fs) for fs in fsets])
        self.starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        self.segment = np.repeat(np.arange(len(fsets)), lengths)
        self.n_solutions = int(lengths.sum())

    @classmethod
    def from_systems(cls, systems, **enum_kwargs):
        """Build from ``(matrix, counts, size)`` triples, enumerating each distinct system once."""
        cache, order, weights = {}, [], []
        for a, y, n in systems:
            key = (a.key, tuple(int(v) for v in y), int(n))
            if key not in cache:
                cache[key] = len(order)
                order.append(enumerate_feasible(a, y, n, **enum_kwargs))
                weights.append(0.0)
            weights[cache[key]] += 1.0
        return cls(order, weights)

    def _segment_lse(self, s):
        m = np.maximum.reduceat(s, self.starts)
        e = np.exp(s - m[self.segment])
        tot = np.add.reduceat(e, self.starts)
        return m + np.log(tot), e / tot[self.segment]

    def value_and_grad_logp(self, logp):
        """Log-likelihood and its gradient with respect to ``log p``.

        The gradient with respect to ``log p_h`` equals the summed expected
        counts ``sum_i E[z_ih]``, which stays finite as ``p_h -> 0``.
        """
        s = self.coef + self.Z @ logp
        lse, w = self._segment_lse(s)
        val = float(self.weights @ lse)
        grad = (w * self.weights[self.segment]) @ self.Z
        return val, grad

    def per_pool(self, logP):
        """Per-segment log-likelihoods and expected counts for per-pool ``log p`` rows."""
        s = self.coef + np.einsum("kh,kh->k", self.Z, logP[self.segment])
        lse, w = self._segment_lse(s)
        E = np.add.reduceat(w[:, None] * self.Z, self.starts, axis=0)
        return lse, E


# ---------------------------------------------------------------------------
# text interchange


def export_feasible_set(fset: FeasibleSet, path) -> None:
    """Write a feasible set as tab-separated text, one solution per row."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# size\t{fset.size}\n")
        fh.write("# counts\t" + "\t".join(map(str, fset.counts)) + "\n")
        for row in fset.matrix.entries:
            fh.write("# row\t" + "\t".join(map(str, row)) + "\n")
        for z in fset.solutions:
            fh.write("\t".join(map(str, z)) + "\n")


def import_feasible_set(path) -> FeasibleSet:
    """Read a feasible set written by :func:`export_feasible_set`, validating every row."""
    size, counts, rows, sols = None, None, [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, *vals = line[1:].split()
            if key == "size":
                size = int(vals[0])
            elif key == "counts":
                counts = [int(v) for v in vals]
            elif key == "row":
                rows.append([int(v) for v in vals])
            continue
        sols.append([int(v) for v in line.split()])
    if size is None or counts is None or not rows:
        raise ValueError(f"{path}: missing size/counts/matrix header")
    a = ConfigurationMatrix(np.array(rows))
    z = np.array(sols, dtype=np.int64).reshape(-1, a.H)
    if len(z) and (np.any(z < 0) or np.any(z @ a.entries.T != np.asarray(counts))):
        raise ValueError(f"{path}: a stored solution does not satisfy A z = y")
    if len({tuple(r) for r in z}) != len(z):
        raise ValueError(f"{path}: duplicate solutions")
    return FeasibleSet(z, a, counts, size)
