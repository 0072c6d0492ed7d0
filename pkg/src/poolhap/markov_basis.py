"""
Markov bases for 0-1 configuration matrices.

A move set is built by completion: for every degree ``d`` the whole
collection of nonnegative integer vectors summing to ``d`` is split into
fibers ``{z : A z = b}``, and whenever a fiber is not connected by the
current moves a connecting difference is added. Degrees are processed in
increasing order until the number of points per degree exceeds a budget,
after which fibers of randomly drawn larger right-hand sides are checked
as a certificate. The guarantee therefore covers every fiber of degree at
most ``metadata['exhaustive_degree']`` plus the probed fibers.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import BasisTooLargeError, EnumerationOverflowError, VerificationUnavailableError
from .feasible import _Search, enumerate_feasible
from .model import ConfigurationMatrix, independent_rows, rational_rank

__all__ = [
    "MarkovBasis",
    "compute_markov_basis",
    "verify_connectivity",
    "disconnected_fibers",
    "fiber_components",
    "lattice_basis",
    "canonicalize_moves",
    "export_basis",
    "import_basis",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MarkovBasis:
    moves: np.ndarray
    matrix: ConfigurationMatrix
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        u = np.asarray(self.moves, dtype=np.int64).reshape(-1, self.matrix.H)
        u.setflags(write=False)
        object.__setattr__(self, "moves", u)

    def __len__(self):
        return len(self.moves)

    def as_set(self) -> set[tuple[int, ...]]:
        return {tuple(int(v) for v in row) for row in self.moves}


def _with_sum_row(matrix: ConfigurationMatrix) -> np.ndarray:
    a = np.asarray(matrix.entries, dtype=np.int64)
    if not matrix.has_sum_row:
        a = np.vstack([np.ones(a.shape[1], dtype=np.int64), a])
    return a


def canonicalize_moves(moves) -> np.ndarray:
    """Flip signs so the first nonzero entry is positive, drop zeros and duplicates."""
    out, seen = [], set()
    for u in np.atleast_2d(np.asarray(moves, dtype=np.int64)):
        nz = np.flatnonzero(u)
        if not len(nz):
            continue
        if u[nz[0]] < 0:
            u = -u
        key = tuple(int(v) for v in u)
        if key not in seen:
            seen.add(key)
            out.append(u)
    H = np.asarray(moves).shape[-1] if np.asarray(moves).size else 0
    return np.array(out, dtype=np.int64).reshape(len(out), H)


def lattice_basis(matrix: ConfigurationMatrix) -> np.ndarray:
    """A basis of the integer kernel of ``A`` (one vector per non-pivot column).

    Lattice bases span every move but do not in general connect fibers.
    """
    a = _with_sum_row(matrix)
    a = a[independent_rows(a)]
    s = _Search(a, np.zeros(len(a), dtype=np.int64), 0)
    H, F = a.shape[1], s.F
    out = []
    for f in range(F):
        u = np.zeros(H, dtype=np.int64)
        u[s.perm[f]] = s.det
        u[s.perm[F:]] = -s.adjA[:, f]
        g = math.gcd(*[int(v) for v in u if v])
        out.append(u // g)
    return canonicalize_moves(np.array(out).reshape(F, H))


def _compositions(d: int, H: int) -> np.ndarray:
    """All nonnegative integer H-vectors summing to ``d``."""
    if H == 1:
        return np.array([[d]], dtype=np.int64)
    cuts = np.array(list(itertools.combinations(range(d + H - 1), H - 1)), dtype=np.int64)
    if not len(cuts):
        return np.zeros((1, H), dtype=np.int64)
    full = np.hstack([np.full((len(cuts), 1), -1), cuts, np.full((len(cuts), 1), d + H - 1)])
    return np.diff(full, axis=1) - 1


class _PointIndex:
    """Exact lookup of integer vectors among a fixed set of points."""

    def __init__(self, points: np.ndarray):
        self.points = points
        hi = points.max(axis=0) + 1 if len(points) else np.ones(points.shape[1], np.int64)
        self.radix = hi
        self.use_keys = math.prod(int(v) for v in hi) < 2 ** 62
        if self.use_keys:
            self.mult = np.concatenate([[1], np.cumprod(hi[:-1])]).astype(np.int64)
            keys = points @ self.mult
            self.order = np.argsort(keys, kind="stable")
            self.sorted_keys = keys[self.order]
        else:
            self.lookup = {row.tobytes(): i for i, row in enumerate(points)}

    def find(self, cand: np.ndarray) -> np.ndarray:
        """Indices of ``cand`` rows in the point set, or -1."""
        out = np.full(len(cand), -1, dtype=np.int64)
        if not len(cand):
            return out
        if self.use_keys:
            ok = np.all((cand >= 0) & (cand < self.radix), axis=1)
            keys = cand[ok] @ self.mult
            pos = np.searchsorted(self.sorted_keys, keys)
            pos = np.minimum(pos, len(self.sorted_keys) - 1)
            hit = self.sorted_keys[pos] == keys
            idx = np.where(hit, self.order[pos], -1)
            out[np.flatnonzero(ok)] = idx
        else:
            for k, row in enumerate(np.ascontiguousarray(cand)):
                out[k] = self.lookup.get(row.tobytes(), -1)
        return out


def _move_edges(index: _PointIndex, moves: np.ndarray):
    pts = index.points
    src, dst = [], []
    for u in moves:
        j = index.find(pts + u)
        ok = j >= 0
        src.append(np.flatnonzero(ok))
        dst.append(j[ok])
    if not src:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(src), np.concatenate(dst)


def _components(n: int, src, dst) -> np.ndarray:
    g = coo_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    return connected_components(g, directed=False)[1]


def fiber_components(points: np.ndarray, moves: np.ndarray) -> np.ndarray:
    """Component label of every point of one fiber under ``±moves``."""
    points = np.asarray(points, dtype=np.int64)
    if len(points) <= 1 or not len(moves):
        return np.arange(len(points))
    index = _PointIndex(points)
    src, dst = _move_edges(index, np.asarray(moves, dtype=np.int64))
    return _components(len(points), src, dst)


def _connecting_moves(points: np.ndarray, labels: np.ndarray) -> list[np.ndarray]:
    """Moves joining every component to the first one, choosing minimal 1-norm pairs."""
    comps = np.unique(labels)
    if len(comps) <= 1:
        return []
    out = []
    base = points[labels == labels[0]]
    for c in comps:
        if c == labels[0]:
            continue
        other = points[labels == c]
        d = np.abs(base[:, None, :] - other[None, :, :]).sum(axis=2) if len(base) * len(other) <= 4_000_000 \
            else np.abs(base[:1, None, :] - other[None, :, :]).sum(axis=2)
        i, j = np.unravel_index(np.argmin(d), d.shape)
        out.append(other[j] - base[i])
    return out


def _complete_degree(a: np.ndarray, d: int, moves: list) -> int:
    """Add moves until every degree-``d`` fiber is connected; return how many were added."""
    pts = _compositions(d, a.shape[1])
    fiber_key = np.unique(pts @ a.T, axis=0, return_inverse=True)[1].ravel()
    index = _PointIndex(pts)
    n = len(pts)
    if moves:
        src, dst = _move_edges(index, np.array(moves))
        labels = _components(n, src, dst)
    else:
        labels = np.arange(n)
    added = 0
    order = np.argsort(fiber_key, kind="stable")
    bounds = np.flatnonzero(np.diff(fiber_key[order])) + 1
    for grp in np.split(order, bounds):
        if len(np.unique(labels[grp])) <= 1:
            continue
        for u in _connecting_moves(pts[grp], labels[grp]):
            u = canonicalize_moves(u)[0]
            moves.append(u)
            added += 1
            src, dst = _move_edges(index, u[None, :])
            merged = _components(labels.max() + 1, labels[src], labels[dst])
            labels = merged[labels]
    return added


def compute_markov_basis(matrix: ConfigurationMatrix, *, max_degree: int = 40, min_degree: int = 8,
                         quiet_degrees: int = 4, max_points: int = 400_000, n_probes: int = 50,
                         probe_size: tuple[int, int] = (9, 20), probe_max_solutions: int = 200_000,
                         seed: int = 0) -> MarkovBasis:
    """Compute a move set connecting the fibers of ``matrix``.

    Fibers of degree ``1..D`` are completed exhaustively, where ``D`` is
    at least ``min_degree`` (when the number of points allows) and grows
    until ``quiet_degrees`` consecutive degrees add no move. Then
    ``n_probes`` random larger fibers are checked and repaired.

    Raises
    ------
    BasisTooLargeError
        If moves are still being found at ``max_degree``.
    """
    a = _with_sum_row(matrix)
    H = a.shape[1]
    moves: list[np.ndarray] = []
    meta = {"kernel_rank": H - rational_rank(a)}
    if meta["kernel_rank"] == 0:
        meta.update(exhaustive_degree=None, probes=0, probe_moves=0)
        return MarkovBasis(np.zeros((0, H), np.int64), ConfigurationMatrix(a), meta)

    d, last_new = 0, 0
    while True:
        nxt = d + 1
        if math.comb(nxt + H - 1, H - 1) > max_points:
            break
        if nxt > min_degree and nxt - last_new > quiet_degrees:
            break
        if nxt > max_degree:
            raise BasisTooLargeError(
                f"moves were still being added at degree {max_degree}; import an externally computed basis")
        d = nxt
        if _complete_degree(a, d, moves):
            last_new = d
    meta["exhaustive_degree"] = d
    meta["last_new_degree"] = last_new

    rng = np.random.default_rng(seed)
    probe_moves, checked = 0, 0
    cm = ConfigurationMatrix(a)
    for _ in range(n_probes):
        n = int(rng.integers(probe_size[0], probe_size[1] + 1))
        z = rng.multinomial(n, rng.dirichlet(np.full(H, 0.5)))
        try:
            fs = enumerate_feasible(cm, a @ z, n, max_solutions=probe_max_solutions, max_seconds=10)
        except EnumerationOverflowError:
            continue
        checked += 1
        pts = fs.solutions
        labels = fiber_components(pts, np.array(moves).reshape(-1, H))
        while len(np.unique(labels)) > 1:
            new = _connecting_moves(pts, labels)
            for u in new:
                moves.append(canonicalize_moves(u)[0])
            probe_moves += len(new)
            labels = fiber_components(pts, np.array(moves))
    if probe_moves:
        log.info("probe certificate added %d moves", probe_moves)
    meta.update(probes=checked, probe_moves=probe_moves, probe_size=list(probe_size), seed=seed)
    return MarkovBasis(canonicalize_moves(np.array(moves).reshape(-1, H)), cm, meta)


def verify_connectivity(matrix: ConfigurationMatrix, basis: MarkovBasis | np.ndarray, counts, size: int,
                        *, max_solutions: int = 10 ** 6, max_seconds: float = 60.0) -> bool:
    """True when the fiber of ``counts`` is connected by the moves of ``basis``.

    Raises
    ------
    VerificationUnavailableError
        If the fiber is too large to enumerate.
    """
    moves = basis.moves if isinstance(basis, MarkovBasis) else np.asarray(basis, dtype=np.int64)
    try:
        fs = enumerate_feasible(matrix, counts, size, max_solutions=max_solutions, max_seconds=max_seconds)
    except EnumerationOverflowError as exc:
        raise VerificationUnavailableError(f"fiber too large to verify: {exc}") from exc
    if len(fs) <= 1:
        return True
    if not len(moves):
        return False
    labels = fiber_components(fs.solutions, moves.reshape(-1, matrix.H))
    return bool(np.all(labels == labels[0]))


def disconnected_fibers(matrix: ConfigurationMatrix, basis: MarkovBasis | np.ndarray, max_size: int) -> list:
    """Every fiber with pool size up to ``max_size`` that ``basis`` fails to connect.

    All compositions of each size are grouped by their counts, so no fiber
    is missed. Returns ``(size, counts)`` pairs; an empty list means the
    basis connects them all.
    """
    a = matrix.entries
    H = a.shape[1]
    moves = basis.moves if isinstance(basis, MarkovBasis) else np.asarray(basis, dtype=np.int64)
    moves = moves.reshape(-1, H)
    bad = []
    for n in range(max_size + 1):
        pts = _compositions(n, H)
        ys = pts @ a.T
        _, inv = np.unique(ys, axis=0, return_inverse=True)
        inv = inv.ravel()
        order = np.argsort(inv, kind="stable")
        bounds = np.flatnonzero(np.diff(inv[order])) + 1
        for grp in np.split(order, bounds):
            if len(grp) < 2:
                continue
            labels = fiber_components(pts[grp], moves) if len(moves) else np.arange(len(grp))
            if np.any(labels != labels[0]):
                bad.append((n, ys[grp[0]].tolist()))
    return bad


def _check_moves(a: np.ndarray, moves: np.ndarray, where: str):
    bad = np.flatnonzero(np.any(moves @ a.T != 0, axis=1))
    if len(bad):
        raise ValueError(f"{where}: move {moves[bad[0]].tolist()} is not in the kernel of the matrix")
    if np.any(~moves.any(axis=1)):
        raise ValueError(f"{where}: zero move")


def export_basis(basis: MarkovBasis, path) -> None:
    """Write moves one per line as space-separated signed integers, matrix rows as comments."""
    with Path(path).open("w") as fh:
        for row in basis.matrix.entries:
            fh.write("# row " + " ".join(map(str, row)) + "\n")
        for k, v in sorted(basis.metadata.items()):
            fh.write(f"# meta {k} {v}\n")
        for u in basis.moves:
            fh.write(" ".join(map(str, u)) + "\n")


def import_basis(path, matrix: ConfigurationMatrix | None = None) -> MarkovBasis:
    """Read a basis file, checking that every move annihilates the matrix.

    The matrix is taken from the file's ``# row`` comments unless given.
    """
    rows, moves = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            parts = s[1:].split()
            if parts and parts[0] == "row":
                rows.append([int(v) for v in parts[1:]])
            continue
        try:
            moves.append([int(v) for v in s.split()])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed move {s!r}") from exc
    if matrix is None:
        if not rows:
            raise ValueError(f"{path}: no matrix given and none stored in the file")
        matrix = ConfigurationMatrix(np.array(rows))
    H = matrix.H
    if any(len(m) != H for m in moves):
        raise ValueError(f"{path}: every move needs {H} entries")
    u = np.array(moves, dtype=np.int64).reshape(len(moves), H)
    _check_moves(_with_sum_row(matrix), u, str(path))
    return MarkovBasis(u, matrix, {"source": str(path)})
