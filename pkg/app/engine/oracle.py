"""
Exact enumeration oracle.

Computes H(target^K | observation) by walking every joint source sequence of
length K and every key value. Sequences are indexed in mixed radix: the joint
symbol at time t is digit t (least significant first) of the sequence index in
base prod(alphabet_sizes), and source i's word packs its symbols the same way
in base alphabet_sizes[i]. For binary sources a word is therefore the usual
LSB-first bit pattern.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy.special import entr

from app.engine.probcore import JointPmf, SubsetLike, _members, entropy
from app.errors import DomainError, ResourceError

logger = logging.getLogger(__name__)

# Sequence tuples times key values
ENUMERATION_BUDGET = 1 << 28
# Observation and target labels are packed into one int64
MAX_LABEL_BITS = 62
# Cells evaluated per vectorised block
BLOCK_CELLS = 1 << 20

ObserveFn = Callable[[Tuple[np.ndarray, ...], np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ObservationMap:
    """
    What the observer sees, as a deterministic function of (words, keys).

    `observe(words, keys)` receives one (S, 1) int64 array of words per source
    and a (1, C) array of key values, and returns int labels broadcastable to
    (S, C), each below 2**width_bits. Keys are uniform over [0, 2**key_bits)
    and independent of the sources.
    """
    observe: ObserveFn
    width_bits: int
    key_bits: int = 0
    label: str = ""

    def __post_init__(self):
        if self.width_bits < 0 or self.key_bits < 0:
            raise DomainError("observation and key widths must be non-negative")

    @classmethod
    def nothing(cls) -> "ObservationMap":
        return cls(lambda words, keys: np.zeros((1, 1), dtype=np.int64), 0, 0, "nothing")

    @classmethod
    def sources(cls, pmf: JointPmf, k: int, subset: SubsetLike) -> "ObservationMap":
        """Observe the raw sequences of `subset` (a bijection on those sources)."""
        members = _members(subset)
        radices = [pmf.alphabet_sizes[i] ** k for i in members]
        width = math.ceil(math.log2(math.prod(radices))) if radices else 0

        def _observe(words, keys):
            return mixed_radix_label([words[i] for i in members], radices)

        return cls(_observe, width, 0, "S" + "".join(str(i) for i in members))


@dataclass(frozen=True)
class ExactEntropyResult:
    h_bits: float
    enumeration_size: int

    def __float__(self) -> float:
        return self.h_bits


def concat_labels(parts: Sequence[Tuple[np.ndarray, int]]) -> np.ndarray:
    """Concatenate (value, width) bit fields, first part in the low bits."""
    out = np.zeros((1, 1), dtype=np.int64)
    shift = 0
    for values, width in parts:
        out = out | (np.asarray(values, dtype=np.int64) << shift)
        shift += width
    return out


def mixed_radix_label(values: Sequence[np.ndarray], radices: Sequence[int]) -> np.ndarray:
    out = np.zeros((1, 1), dtype=np.int64)
    scale = 1
    for v, r in zip(values, radices):
        out = out + np.asarray(v, dtype=np.int64) * scale
        scale *= r
    return out


def sequence_space(pmf: JointPmf, k: int) -> int:
    return int(pmf.size) ** int(k)


def enumerate_sequences(pmf: JointPmf, k: int, start: int, stop: int) -> Tuple[Tuple[np.ndarray, ...], np.ndarray]:
    """Per-source words and probabilities of sequence indices [start, stop)."""
    idx = np.arange(start, stop, dtype=np.int64)
    flat = pmf.flat
    prob = np.ones(idx.shape, dtype=np.float64)
    words = [np.zeros(idx.shape, dtype=np.int64) for _ in range(pmf.num_sources)]
    scale = [1] * pmf.num_sources
    for _ in range(k):
        idx, digit = np.divmod(idx, pmf.size)
        prob *= flat[digit]
        symbols = np.unravel_index(digit, pmf.alphabet_sizes)
        for i, sym in enumerate(symbols):
            words[i] += sym.astype(np.int64) * scale[i]
            scale[i] *= pmf.alphabet_sizes[i]
    return tuple(words), prob


def _table_entropy(weights: np.ndarray) -> float:
    return math.fsum(entr(weights)) / math.log(2.0)


def _block_merge(labels: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    uniq, inv = np.unique(labels, return_inverse=True)
    return uniq, np.bincount(inv.ravel(), weights=weights, minlength=uniq.size)


class LabelSums:
    """
    Per-label Kahan sums over blocks of (unique labels, weights).

    The result depends only on the order of `add` calls.
    """

    def __init__(self):
        self.labels = np.zeros(0, dtype=np.int64)
        self._total = np.zeros(0, dtype=np.float64)
        self._comp = np.zeros(0, dtype=np.float64)

    def add(self, labels: np.ndarray, weights: np.ndarray) -> None:
        labels = np.asarray(labels, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        new = np.setdiff1d(labels, self.labels, assume_unique=True)
        if new.size:
            merged = np.union1d(self.labels, new)
            pos = np.searchsorted(merged, self.labels)
            total = np.zeros(merged.size)
            comp = np.zeros(merged.size)
            total[pos] = self._total
            comp[pos] = self._comp
            self.labels, self._total, self._comp = merged, total, comp
        idx = np.searchsorted(self.labels, labels)
        y = weights - self._comp[idx]
        t = self._total[idx] + y
        self._comp[idx] = (t - self._total[idx]) - y
        self._total[idx] = t

    @property
    def weights(self) -> np.ndarray:
        return self._total.copy()


def _check_budget(pmf: JointPmf, k: int, obs: ObservationMap, target_bits: float) -> int:
    total = sequence_space(pmf, k) << obs.key_bits
    if total > ENUMERATION_BUDGET:
        raise ResourceError(
            f"enumeration of {total} (sequence, key) tuples exceeds the budget of {ENUMERATION_BUDGET}"
        )
    if obs.width_bits + target_bits > MAX_LABEL_BITS:
        raise ResourceError(f"labels of {obs.width_bits}+{target_bits:.0f} bits do not fit in {MAX_LABEL_BITS}")
    return total


def _accumulate(pmf: JointPmf, k: int, obs: ObservationMap, target: Tuple[int, ...], jobs: int):
    """
    Distributions of the observation alone and of (observation, target).

    Blocks are fixed by the sequence and key ranges and are folded into the
    per-label sums in block order, whatever the number of workers.
    """
    radices = [pmf.alphabet_sizes[i] ** k for i in target]
    t_size = math.prod(radices)
    n_seq = sequence_space(pmf, k)
    n_keys = 1 << obs.key_bits
    key_block = min(n_keys, BLOCK_CELLS)
    seq_block = max(1, BLOCK_CELLS // key_block)
    starts = list(range(0, n_seq, seq_block))
    workers = max(1, min(int(jobs), len(starts)))
    key_weight = 1.0 / n_keys

    def _run(s0: int):
        s1 = min(s0 + seq_block, n_seq)
        words, prob = enumerate_sequences(pmf, k, s0, s1)
        col_words = tuple(w[:, None] for w in words)
        tgt = mixed_radix_label([words[i] for i in target], radices).reshape(-1)[:, None] if target \
            else np.zeros((s1 - s0, 1), dtype=np.int64)
        blocks = []
        for c0 in range(0, n_keys, key_block):
            keys = np.arange(c0, min(c0 + key_block, n_keys), dtype=np.int64)[None, :]
            labels = np.broadcast_to(obs.observe(col_words, keys), (s1 - s0, keys.shape[1]))
            weights = np.broadcast_to(prob[:, None] * key_weight, labels.shape).ravel()
            blocks.append((
                _block_merge(labels.ravel(), weights),
                _block_merge((labels * t_size + tgt).ravel(), weights),
            ))
        return blocks

    obs_sums, joint_sums = LabelSums(), LabelSums()

    def _fold(results) -> None:
        for blocks in results:
            for (o_lab, o_w), (j_lab, j_w) in blocks:
                obs_sums.add(o_lab, o_w)
                joint_sums.add(j_lab, j_w)

    if workers == 1:
        _fold(map(_run, starts))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            _fold(pool.map(_run, starts))
    logger.debug("Oracle %s: %d sequences x %d keys in %d blocks, %d workers",
                 obs.label, n_seq, n_keys, len(starts), workers)
    return (obs_sums.labels, obs_sums.weights), (joint_sums.labels, joint_sums.weights)


def _max_entropy(pmf: JointPmf, k: int, target: Tuple[int, ...]) -> float:
    return k * math.fsum(math.log2(pmf.alphabet_sizes[i]) for i in target)


def exact_conditional_entropy(pmf: JointPmf, k: int, obs: ObservationMap, target: SubsetLike,
                              jobs: int = 1) -> ExactEntropyResult:
    """
    H(target^K | observation) by full enumeration.

    Raises:
        ResourceError: sequences times key values exceed ENUMERATION_BUDGET
    """
    members = _members(target)
    for i in members:
        if not 0 <= i < pmf.num_sources:
            raise DomainError(f"source index {i} out of range for {pmf.num_sources} sources")
    target_bits = sum(k * math.log2(pmf.alphabet_sizes[i]) for i in members)
    total = _check_budget(pmf, int(k), obs, math.ceil(target_bits))
    (_, obs_w), (_, joint_w) = _accumulate(pmf, int(k), obs, members, jobs)
    h = _table_entropy(joint_w) - _table_entropy(obs_w)
    h = min(max(h, 0.0), _max_entropy(pmf, k, members))
    return ExactEntropyResult(h_bits=h, enumeration_size=total)


def exact_mutual_information(pmf: JointPmf, k: int, obs: ObservationMap, target: SubsetLike,
                             jobs: int = 1) -> ExactEntropyResult:
    """I(target^K; observation) = K*H(target) - H(target^K | observation)."""
    cond = exact_conditional_entropy(pmf, k, obs, target, jobs)
    total = k * entropy(pmf, target).value
    return ExactEntropyResult(h_bits=max(total - cond.h_bits, 0.0), enumeration_size=cond.enumeration_size)


def exact_observation_entropy(pmf: JointPmf, k: int, obs: ObservationMap, jobs: int = 1) -> ExactEntropyResult:
    """H(observation); keys are marginalised like in the conditional case."""
    total = _check_budget(pmf, int(k), obs, 0)
    (_, obs_w), _ = _accumulate(pmf, int(k), obs, (), jobs)
    return ExactEntropyResult(h_bits=max(_table_entropy(obs_w), 0.0), enumeration_size=total)


def observation_chain(maps: Sequence[ObservationMap]) -> ObservationMap:
    """Observe several maps at once (their keys are treated as one key space)."""
    width = sum(m.width_bits for m in maps)
    key_bits = sum(m.key_bits for m in maps)

    def _observe(words, keys):
        parts = []
        shift = 0
        for m in maps:
            sub = (keys >> shift) & ((1 << m.key_bits) - 1)
            parts.append((m.observe(words, sub), m.width_bits))
            shift += m.key_bits
        return concat_labels(parts)

    return ObservationMap(_observe, width, key_bits, "+".join(m.label for m in maps))
