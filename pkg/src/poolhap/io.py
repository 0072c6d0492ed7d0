"""
Plain-text file formats.

* haplotype list: one 0/1 string per line;
* subset matrix: one observed count per line, listing its member
  haplotypes as bit strings (``?`` marks any allele, so ``?01`` stands for
  ``001`` and ``101``);
* pool table: TSV with columns ``pool_id``, ``n``, one column per count and
  optional ``x_*`` covariate columns;
* truth table: TSV with a ``label`` column followed by one column per
  haplotype.

Lines starting with ``#`` are comments everywhere.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import (
    ConfigurationMatrix,
    Dataset,
    PoolObservation,
    build_allele_count_matrix,
    build_subset_matrix,
    partial_haplotype_members,
    validate_haplotypes,
)

__all__ = [
    "read_haplotypes",
    "write_haplotypes",
    "read_subset_matrix",
    "write_subset_matrix",
    "read_pool_table",
    "write_pool_table",
    "load_dataset",
    "dataset_allele_counts",
    "read_truth",
    "write_truth",
]


def _lines(path):
    for line in Path(path).read_text().splitlines():
        s = line.strip()
        if s and not s.startswith("#"):
            yield s


def read_haplotypes(path) -> list[str]:
    return validate_haplotypes(list(_lines(path)))


def write_haplotypes(path, haplotypes) -> None:
    Path(path).write_text("".join(h + "\n" for h in haplotypes))


def read_subset_matrix(path, haplotypes) -> ConfigurationMatrix:
    haps = validate_haplotypes(haplotypes)
    index = {h: i for i, h in enumerate(haps)}
    subsets = []
    for s in _lines(path):
        members = set()
        for tok in s.replace(",", " ").split():
            if "?" in tok:
                found = partial_haplotype_members(haps, tok)
            elif tok in index:
                found = [index[tok]]
            else:
                raise ValueError(f"{path}: {tok!r} is not an input haplotype")
            members.update(found)
        subsets.append(sorted(members))
    return build_subset_matrix(haps, subsets)


def write_subset_matrix(path, matrix: ConfigurationMatrix, haplotypes) -> None:
    lines = [" ".join(h for h, v in zip(haplotypes, row) if v) for row in matrix.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pool_table(path):
    """Returns ``(pool_ids, sizes, counts, count_names, covariates, covariate_names)``."""
    rows = [s.split("\t") for s in _lines(path)]
    if not rows:
        raise ValueError(f"{path}: empty pool table")
    head = rows[0]
    if head[:2] != ["pool_id", "n"]:
        raise ValueError(f"{path}: header must start with pool_id and n")
    xcols = [j for j, c in enumerate(head) if c.startswith("x_")]
    ycols = [j for j in range(2, len(head)) if j not in xcols]
    body = rows[1:]
    for k, r in enumerate(body, 2):
        if len(r) != len(head):
            raise ValueError(f"{path}: row {k} has {len(r)} fields, expected {len(head)}")
    ids = [r[0] for r in body]
    sizes = np.array([int(r[1]) for r in body], dtype=np.int64)
    Y = np.array([[int(r[j]) for j in ycols] for r in body], dtype=np.int64).reshape(len(body), len(ycols))
    X = np.array([[float(r[j]) for j in xcols] for r in body]).reshape(len(body), len(xcols))
    return ids, sizes, Y, [head[j] for j in ycols], X, [head[j][2:] for j in xcols]


def write_pool_table(path, dataset: Dataset, count_names=None, covariate_names=None) -> None:
    R = dataset.pools[0].matrix.R
    count_names = count_names or [f"y{r + 1}" for r in range(R)]
    cov = dataset.pools[0].covariate
    ncov = 0 if cov is None else len(cov)
    covariate_names = covariate_names or [f"c{k + 1}" for k in range(ncov)]
    lines = ["\t".join(["pool_id", "n", *count_names, *("x_" + c for c in covariate_names)])]
    for pool in dataset.pools:
        xs = [] if pool.covariate is None else [repr(float(v)) for v in pool.covariate]
        lines.append("\t".join([pool.pool_id, str(pool.size), *map(str, pool.counts), *xs]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(pools_path, haplotypes, matrix: ConfigurationMatrix | None = None) -> Dataset:
    """Pool table plus haplotype list; the allele-count matrix is used unless ``matrix`` is given."""
    haps = validate_haplotypes(haplotypes)
    A = matrix if matrix is not None else build_allele_count_matrix(haps)
    if A.H != len(haps):
        raise ValueError(f"matrix has {A.H} columns for {len(haps)} haplotypes")
    ids, sizes, Y, _, X, _ = read_pool_table(pools_path)
    if Y.shape[1] != A.R:
        raise ValueError(f"pool table has {Y.shape[1]} count columns; the matrix has {A.R} rows")
    pools = tuple(PoolObservation(i, n, y, A, x if X.shape[1] else None) for i, n, y, x in zip(ids, sizes, Y, X))
    return Dataset(tuple(haps), pools)


def dataset_allele_counts(dataset: Dataset) -> np.ndarray:
    return np.array([p.counts for p in dataset.pools], dtype=np.int64)


def read_truth(path):
    """Returns ``(labels, haplotypes, frequencies)``."""
    rows = [s.split("\t") for s in _lines(path)]
    if not rows or rows[0][0] != "label":
        raise ValueError(f"{path}: truth header must start with label")
    haps = rows[0][1:]
    return [r[0] for r in rows[1:]], haps, np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def write_truth(path, labels, haplotypes, frequencies) -> None:
    F = np.atleast_2d(np.asarray(frequencies, dtype=float))
    lines = ["\t".join(["label", *haplotypes])]
    for lab, row in zip(labels, F):
        lines.append("\t".join([str(lab), *(repr(float(v)) for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n")
