"""
Partition ligation: candidate haplotype lists for long marker sequences.

Markers are split into short contiguous blocks. Frequencies of every
partial haplotype over a block are estimated from the pooled allele counts
restricted to that block, and partial haplotypes whose posterior mean
exceeds a threshold are kept. Neighbouring blocks are then joined pairwise
by concatenating their kept partial haplotypes, re-estimating and
re-thresholding, until a single candidate list over all markers remains.
"""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ThresholdTooHighError
from .model import (
    ConfigurationMatrix,
    Dataset,
    PoolObservation,
    all_haplotypes,
    build_allele_count_matrix,
    independent_rows,
)
from .samplers import METHODS, SamplerConfig, run_inference

__all__ = [
    "LigationConfig",
    "LigationResult",
    "segment_markers",
    "restrict_to_markers",
    "estimate_block_frequencies",
    "threshold_set",
    "ligate",
    "partition_ligation",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LigationConfig:
    block_size: int = 4
    threshold: float = 0.01
    method: str = "approx"
    alpha: float = 1.0
    cap: int = 256
    chains: int = 1
    burn_in: int = 300
    iters: int = 300
    max_tree_depth: int = 7
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.block_size not in (3, 4):
            raise ValueError("block_size must be 3 or 4")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.cap < 1:
            raise ValueError("cap must be positive")

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(chains=self.chains, burn_in=self.burn_in, iters=self.iters,
                             seed=seed, method=self.method, max_tree_depth=self.max_tree_depth)


@dataclass
class LigationResult:
    haplotypes: list[str]
    levels: list[list[dict]]  # per level, per block: {"markers", "haplotypes", "estimates"}


def segment_markers(M: int, block_size: int) -> list[list[int]]:
    """Contiguous blocks of ``block_size`` markers; a trailing single marker joins the previous block."""
    if M < 2:
        raise ValueError("need at least two markers")
    if block_size < 2:
        raise ValueError("block_size must be at least 2")
    blocks = [list(range(s, min(s + block_size, M))) for s in range(0, M, block_size)]
    if len(blocks) > 1 and len(blocks[-1]) == 1:
        blocks[-2].extend(blocks.pop())
    return blocks


def restrict_to_markers(allele_counts, sizes, markers, candidates, covariates=None) -> Dataset:
    """Dataset over partial haplotypes ``candidates`` using the allele counts of ``markers``.

    A candidate list that is missing haplotypes can make some marker rows
    redundant (for instance every candidate carries the major allele), and
    the observed counts of such rows need not agree with the others. Only
    the earliest independent rows are kept.
    """
    Y = np.asarray(allele_counts, dtype=np.int64)[:, markers]
    A = build_allele_count_matrix(candidates).entries
    keep = [r - 1 for r in independent_rows(np.vstack([np.ones(A.shape[1], np.int64), A])) if r > 0]
    if len(keep) < len(markers):
        log.info("markers %s are redundant for the candidate list; their counts are ignored",
                 [markers[r] for r in range(len(markers)) if r not in keep])
    Ak = ConfigurationMatrix(A[keep])
    pools = []
    for i, n in enumerate(np.asarray(sizes, dtype=np.int64)):
        x = None if covariates is None else covariates[i]
        pools.append(PoolObservation(f"pool{i + 1}", int(n), Y[i, keep], Ak, x))
    return Dataset(tuple(candidates), tuple(pools))


def estimate_block_frequencies(allele_counts, sizes, markers, config: LigationConfig,
                               candidates=None, seed: int = 0) -> dict[str, float]:
    """Posterior-mean frequencies of partial haplotypes over ``markers``.

    ``candidates`` defaults to all ``2**len(markers)`` partial haplotypes.
    """
    if candidates is None:
        candidates = all_haplotypes(len(markers))
    if len(candidates) == 1:
        return {candidates[0]: 1.0}
    data = restrict_to_markers(allele_counts, sizes, markers, candidates)
    draws = run_inference(data, config.alpha, config.sampler_config(seed))
    return dict(zip(candidates, draws.mean().tolist()))


def threshold_set(estimates: dict[str, float], threshold: float, cap: int | None = None) -> list[str]:
    """Partial haplotypes with estimate above ``threshold``, keeping at most ``cap`` of the largest."""
    kept = [h for h, v in estimates.items() if v > threshold]
    if not kept:
        raise ThresholdTooHighError(
            f"no partial haplotype exceeds threshold {threshold}; choose a lower threshold")
    if cap is not None and len(kept) > cap:
        log.info("candidate cap %d reached; pruning %d lowest-estimate partial haplotypes", cap, len(kept) - cap)
        kept = sorted(kept, key=lambda h: -estimates[h])[:cap]
    return sorted(kept)


def _join(left: list[str], right: list[str]) -> list[str]:
    return [a + b for a, b in itertools.product(left, right)]


def ligate(block_sets: list[list[str]]) -> list[str]:
    """Concatenate block sets pairwise and recursively, without re-estimation.

    Raises
    ------
    ThresholdTooHighError
        If any block set is empty.
    """
    if not block_sets:
        raise ValueError("need at least one block set")
    sets = [list(s) for s in block_sets]
    if any(not s for s in sets):
        raise ThresholdTooHighError("a thresholded block set is empty; choose a lower threshold")
    while len(sets) > 1:
        nxt = [_join(sets[j], sets[j + 1]) for j in range(0, len(sets) - 1, 2)]
        if len(sets) % 2:
            nxt.append(sets[-1])
        sets = nxt
    return sets[0]


def partition_ligation(allele_counts, sizes, config: LigationConfig = LigationConfig()) -> LigationResult:
    """Candidate haplotypes over all markers from pooled allele counts.

    ``allele_counts`` has one row per pool and one column per marker.
    Frequencies are re-estimated after every join that is followed by
    another one; the final concatenation is returned unthresholded, pruned
    to ``config.cap`` by estimate only when it is larger than that.
    """
    Y = np.asarray(allele_counts, dtype=np.int64)
    if Y.ndim != 2:
        raise ValueError("allele counts must be a pools x markers array")
    sizes = np.asarray(sizes, dtype=np.int64)
    blocks = segment_markers(Y.shape[1], config.block_size)
    seeds = iter(np.random.SeedSequence(config.seed).generate_state(4 * len(blocks) + 4))

    def estimate(markers, cands, seed):
        return estimate_block_frequencies(Y, sizes, markers, config, cands, int(seed))

    def run_level(items):
        jobs = [(m, c, next(seeds)) for m, c in items]
        if config.workers > 1:
            with ThreadPoolExecutor(config.workers) as ex:
                return list(ex.map(lambda a: estimate(*a), jobs))
        return [estimate(*a) for a in jobs]

    level = [(b, None) for b in blocks]
    history = []
    while True:
        ests = run_level(level)
        history.append([{"markers": m, "haplotypes": list(e), "estimates": e} for (m, _), e in zip(level, ests)])
        sets = [(m, threshold_set(e, config.threshold, config.cap)) for (m, _), e in zip(level, ests)]
        joined = [(sets[j][0] + sets[j + 1][0], _join(sets[j][1], sets[j + 1][1]))
                  for j in range(0, len(sets) - 1, 2)]
        if len(sets) % 2:
            joined.append(sets[-1])
        if len(joined) == 1:
            markers, cands = joined[0]
            break
        level = joined
    if len(cands) > config.cap:
        est = estimate(markers, cands, next(seeds))
        cands = sorted(sorted(cands, key=lambda h: -est[h])[:config.cap])
        log.info("final candidate list pruned to %d", config.cap)
    return LigationResult(cands, history)
