"""
Multi-source network of correlated sources.

Every source sends its private word (width ~ K*H(S_i|rest)) and its shares of
the co-information terms I(S_t|S_t^c) it takes part in. Private words may be
masked by XOR with common words (one, or two for combination masking) instead
of key material. An adversary taps a set of links, one per source, and the
oracle measures what it learns about each source.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.engine import gf2
from app.engine.leakage import BoundInterval, LeakageReport, Tolerance, WiretapScenario, build_report
from app.engine.oracle import ObservationMap, concat_labels, exact_mutual_information
from app.engine.probcore import (
    JointPmf,
    SourceSubset,
    conditional_entropy,
    conditional_mutual_information,
    entropy,
    mutual_information,
    pmf_from_spec,
    shared_terms,
)
from app.engine.swcodec import MultiLinearEncoder, build_layout, round_half_up
from app.errors import DomainError

logger = logging.getLogger(__name__)

MAX_SOURCES = 4
# Co-information below this is treated as negative
NEGATIVE_TOL = 1e-9
REGION_EPS = 1e-12
# Masked leakage may exceed the unmasked value by float noise only
MASK_TOL = 1e-9


@dataclass(frozen=True)
class MultiSourceConfig:
    """
    pmf over n sources, block length, optional share overrides and secure links.

    share_overrides maps a term's sorted member tuple to the width each member
    produces, in member order.
    """
    pmf: JointPmf
    k: int
    share_overrides: Mapping[Tuple[int, ...], Tuple[int, ...]] = field(default_factory=dict)
    secure: FrozenSet[int] = frozenset()

    def __post_init__(self):
        n = self.pmf.num_sources
        if not 2 <= n <= MAX_SOURCES:
            raise DomainError(f"network needs 2..{MAX_SOURCES} sources, got {n}")
        if any(a != 2 for a in self.pmf.alphabet_sizes):
            raise DomainError(f"network sources must be binary, got alphabets {self.pmf.alphabet_sizes}")
        if any(not 0 <= s < n for s in self.secure):
            raise DomainError(f"secure link index out of range for {n} sources")

    @property
    def num_sources(self) -> int:
        return self.pmf.num_sources


@dataclass(frozen=True)
class ShareSlot:
    term: Tuple[int, ...]
    source: int
    width: int

    @property
    def name(self) -> str:
        return f"C{self.source}:{''.join(str(m) for m in self.term)}"


@dataclass(frozen=True)
class MultiLayout:
    k: int
    private: Tuple[int, ...]
    shares: Tuple[ShareSlot, ...]

    @property
    def num_sources(self) -> int:
        return len(self.private)

    def segments(self, i: int) -> List[Tuple[str, int]]:
        """Transmitted segments of source i: private word first, then its shares."""
        out = [(private_name(i), self.private[i])]
        out += [(s.name, s.width) for s in self.shares if s.source == i]
        return out

    def widths(self) -> Dict[str, int]:
        return {name: w for i in range(self.num_sources) for name, w in self.segments(i)}

    def total_width(self, i: int) -> int:
        return sum(w for _, w in self.segments(i))

    def term_width(self, term: Sequence[int]) -> int:
        term = tuple(sorted(term))
        return sum(s.width for s in self.shares if s.term == term)


def private_name(i: int) -> str:
    return f"P{i}"


def _equal_split(width: int, producers: int) -> List[int]:
    base, rem = divmod(width, producers)
    return [base + (1 if idx < rem else 0) for idx in range(producers)]


def allocate_portions(cfg: MultiSourceConfig) -> MultiLayout:
    """
    Private widths round K*H(S_i|rest) half-up; each term's width rounds
    K*I(S_t|S_t^c) half-up and is split equally among its members, the
    remainder going to the lowest indices. Two sources without overrides use
    the two-source layout rule with alpha 0.5.

    Raises:
        DomainError: negative co-information term, bad override, or a source
            needing more than K rows
    """
    pmf, k = cfg.pmf, cfg.k
    n = pmf.num_sources
    if n == 2 and not cfg.share_overrides and pmf.alphabet_sizes == (2, 2):
        lay = build_layout(pmf, k, 0.5)
        return MultiLayout(k, (lay.m_vx, lay.m_vy), (ShareSlot((0, 1), 0, lay.m_cx), ShareSlot((0, 1), 1, lay.m_cy)))

    private = tuple(
        round_half_up(k * conditional_entropy(pmf, i, tuple(j for j in range(n) if j != i)).value)
        for i in range(n)
    )
    shares: List[ShareSlot] = []
    for members, ci in shared_terms(pmf):
        if ci < -NEGATIVE_TOL:
            raise DomainError(f"co-information of {members} is negative ({ci:.6g}); no share allocation exists")
        width = round_half_up(k * max(ci, 0.0))
        override = cfg.share_overrides.get(members)
        if override is None:
            split = _equal_split(width, len(members))
        else:
            split = [int(v) for v in override]
            if len(split) != len(members) or min(split) < 0:
                raise DomainError(f"share override for {members} must give one non-negative width per member")
            if abs(sum(split) - width) > 1:
                raise DomainError(f"shares of {members} sum to {sum(split)}, term width is {width}")
        shares.extend(ShareSlot(members, m, w) for m, w in zip(members, split))

    layout = MultiLayout(k, private, tuple(shares))
    for i in range(n):
        if layout.total_width(i) > k:
            raise DomainError(f"source {i} needs {layout.total_width(i)} rows, more than K={k}")
    return layout


def make_encoder(layout: MultiLayout, seed: int) -> MultiLinearEncoder:
    return MultiLinearEncoder.random(layout.k, [layout.segments(i) for i in range(layout.num_sources)], seed)


# ============================================================================
# MASKING
# ============================================================================

@dataclass(frozen=True)
class MaskEntry:
    """Low `width` bits of the private word `target` are XOR-ed with each mask word."""
    source: int
    target: str
    width: int
    masks: Tuple[str, ...]
    link: str


@dataclass(frozen=True)
class MaskPlan:
    entries: Tuple[MaskEntry, ...] = ()
    combination: bool = False

    def rows(self) -> List[Dict]:
        return [
            {"source": e.source, "target": e.target, "width": e.width, "masks": "+".join(e.masks), "link": e.link}
            for e in self.entries
        ]


def mask_candidates(cfg: MultiSourceConfig, layout: MultiLayout, i: int) -> List[ShareSlot]:
    """
    Non-empty shares of the terms source i belongs to, in preference order:
    words carried on secure links first, then words produced by other
    sources, then wider words.
    """
    return sorted(
        (s for s in layout.shares if i in s.term and s.width > 0),
        key=lambda s: (s.source not in cfg.secure, s.source == i, -s.width, s.name),
    )


def _entry(layout: MultiLayout, i: int, chosen: Sequence[ShareSlot]) -> MaskEntry:
    width = min([layout.private[i]] + [s.width for s in chosen])
    return MaskEntry(i, private_name(i), width, tuple(s.name for s in chosen), f"L{i}")


def _leakage_table(cfg: MultiSourceConfig, layout: MultiLayout, encs: MultiLinearEncoder,
                   plan: Optional[MaskPlan], adversaries: Sequence[Tuple[int, ...]], jobs: int) -> np.ndarray:
    out = np.zeros((len(adversaries), cfg.num_sources))
    for a, adv in enumerate(adversaries):
        view = tapped_view(encs, layout, plan, adv)
        for i in range(cfg.num_sources):
            out[a, i] = exact_mutual_information(cfg.pmf, cfg.k, view, i, jobs).h_bits
    return out


def plan_masks(cfg: MultiSourceConfig, layout: MultiLayout, combination: bool = False,
               encs: Optional[MultiLinearEncoder] = None, jobs: int = 1) -> MaskPlan:
    """
    Pick common words to mask each private word with.

    Without `encs` every source with a candidate gets the preferred word (or
    the two preferred words for combination masking). With `encs` each entry
    is measured on the realised code first: it is kept only if no adversary
    set learns more about any source than without masking, otherwise the next
    candidate is tried and a source with no safe candidate stays unmasked.
    """
    n = layout.num_sources
    adversaries = all_adversaries(n)
    baseline = _leakage_table(cfg, layout, encs, None, adversaries, jobs) if encs is not None else None
    entries: List[MaskEntry] = []
    for i in range(n):
        if layout.private[i] == 0:
            continue
        candidates = mask_candidates(cfg, layout, i)
        if not candidates:
            continue
        if combination and len(candidates) < 2:
            logger.warning("Source %d has one common word only; combination mask falls back to single", i)
        options: List[Tuple[ShareSlot, ...]] = []
        if combination:
            options += list(itertools.combinations(candidates, 2))
        options += [(s,) for s in candidates]
        if baseline is None:
            entries.append(_entry(layout, i, options[0]))
            continue
        for chosen in options:
            trial = MaskPlan(tuple(entries) + (_entry(layout, i, chosen),), combination)
            masked = _leakage_table(cfg, layout, encs, trial, adversaries, jobs)
            if np.all(masked <= baseline + MASK_TOL):
                entries.append(trial.entries[-1])
                break
            logger.debug("Mask %s for source %d raises leakage; trying the next candidate",
                         "+".join(s.name for s in chosen), i)
        else:
            logger.info("Source %d left unmasked: every candidate mask raises some adversary's leakage", i)
    return MaskPlan(tuple(entries), combination)


def apply_masks(plan: MaskPlan, words: Mapping[str, object], widths: Mapping[str, int]) -> Dict[str, object]:
    """
    XOR every planned segment with its mask words; applying twice restores the input.

    Values may be ints or int64 arrays.
    """
    out = dict(words)
    for e in plan.entries:
        if e.width == 0:
            continue
        if len(set(e.masks)) != len(e.masks):
            raise DomainError(f"mask words for {e.target} must be distinct")
        for name in (e.target,) + e.masks:
            if name not in widths or name not in words:
                raise DomainError(f"unknown word '{name}' in mask plan")
            if widths[name] < e.width:
                raise DomainError(f"word '{name}' has {widths[name]} bits, segment needs {e.width}")
        seg = 0
        for name in e.masks:
            seg = seg ^ (words[name] & gf2.low_mask(e.width))
        out[e.target] = out[e.target] ^ seg
    return out


remove_masks = apply_masks


def transmitted_words(encs: MultiLinearEncoder, layout: MultiLayout, plan: Optional[MaskPlan],
                      words: Sequence) -> Dict[str, object]:
    """Every segment as sent on the links, after masking."""
    plain: Dict[str, object] = {}
    for i in range(layout.num_sources):
        plain.update(encs.encode_source(i, words[i]))
    if plan is None or not plan.entries:
        return plain
    return apply_masks(plan, plain, layout.widths())


def tapped_view(encs: MultiLinearEncoder, layout: MultiLayout, plan: Optional[MaskPlan],
                adversary: Iterable[int]) -> ObservationMap:
    taps = tuple(sorted(set(adversary)))
    fields = [(name, w) for j in taps for name, w in layout.segments(j)]

    def _observe(words, keys):
        sent = transmitted_words(encs, layout, plan, words)
        return concat_labels([(sent[name], w) for name, w in fields])

    return ObservationMap(_observe, sum(w for _, w in fields), 0, "tap" + "".join(str(j) for j in taps))


def simulate_network(cfg: MultiSourceConfig, layout: MultiLayout, encs: MultiLinearEncoder,
                     plan: Optional[MaskPlan], adversary: Iterable[int], jobs: int = 1) -> List[LeakageReport]:
    """Exact leakage about each source given the words on the tapped links."""
    taps = tuple(sorted(set(adversary)))
    if any(not 0 <= j < cfg.num_sources for j in taps):
        raise DomainError(f"tapped link out of range: {taps}")
    view = tapped_view(encs, layout, plan, taps)
    tol = Tolerance()
    reports = []
    for i in range(cfg.num_sources):
        measured = exact_mutual_information(cfg.pmf, cfg.k, view, i, jobs).h_bits
        scenario = WiretapScenario((), SourceSubset((i,)), tag=f"S{i}|{view.label}")
        reports.append(build_report(scenario, cfg.k, measured, BoundInterval(None, None, False), tol,
                                    seed=encs.seed))
    return reports


@dataclass(frozen=True)
class MaskingRow:
    adversary: Tuple[int, ...]
    source: int
    unmasked_bits: float
    masked_bits: float

    def row(self) -> Dict:
        return {
            "adversary": "".join(str(j) for j in self.adversary) or "none",
            "source": self.source,
            "unmasked_bits": self.unmasked_bits,
            "masked_bits": self.masked_bits,
        }


def all_adversaries(n: int) -> List[Tuple[int, ...]]:
    return [c for t in range(n + 1) for c in itertools.combinations(range(n), t)]


def masking_comparison(cfg: MultiSourceConfig, layout: MultiLayout, encs: MultiLinearEncoder, plan: MaskPlan,
                       adversaries: Iterable[Iterable[int]], jobs: int = 1) -> List[MaskingRow]:
    rows = []
    for adv in adversaries:
        adv = tuple(sorted(set(adv)))
        plain = simulate_network(cfg, layout, encs, None, adv, jobs)
        masked = simulate_network(cfg, layout, encs, plan, adv, jobs)
        for i, (u, m) in enumerate(zip(plain, masked)):
            rows.append(MaskingRow(adv, i, u.measured_bits, m.measured_bits))
    return rows


# ============================================================================
# RATES
# ============================================================================

@dataclass(frozen=True)
class MaskedRateBound:
    """
    bound_bits = H(S_1..S_n) - sum over S_t of (t-1) I(S_t|S_t^c). The same
    sum taken from the marginal entropies is kept as marginal_form.
    """
    bound_bits: float
    per_source: Tuple[float, ...]
    slepian_wolf_sum_rate: float
    marginal_form: float


def masked_rate_bound(cfg: MultiSourceConfig) -> MaskedRateBound:
    pmf = cfg.pmf
    n = pmf.num_sources
    savings = sum((len(members) - 1) * ci for members, ci in shared_terms(pmf))
    joint = entropy(pmf, tuple(range(n))).value
    marginals = sum(entropy(pmf, i).value for i in range(n))
    bound = joint - savings
    return MaskedRateBound(bound, (bound,) * n, joint, marginals - savings)


@dataclass(frozen=True)
class MultiRatePoint:
    i: int
    r_i: float
    r_ki: float
    h_i: float = 0.0
    j: Optional[int] = None
    r_j: float = 0.0
    r_kj: float = 0.0
    h_j: float = 0.0

    def __post_init__(self):
        if min(self.r_i, self.r_ki, self.r_j, self.r_kj) < 0:
            raise DomainError("rates must be non-negative")


def default_term(i: int, n: int) -> Tuple[int, ...]:
    """{S_i, S_n}, or {S_i, S_(n-1)} when S_i is itself the last source."""
    other = n - 1 if i != n - 1 else n - 2
    return tuple(sorted((i, other)))


def region_member_multi(point: MultiRatePoint, case: int, cfg: MultiSourceConfig,
                        term: Optional[Sequence[int]] = None) -> Tuple[bool, Tuple[str, ...]]:
    """
    Case 1: R_i >= H(S_i), R_ki >= I(S_t|S_t^c), 0 <= h_i <= that term.
    Case 2: R_i, R_j >= H(S_i,S_j), R_ki, R_kj >= I(S_i;S_j), 0 <= h_j <= H(S_i,S_j).
    """
    pmf = cfg.pmf
    n = pmf.num_sources
    if not 0 <= point.i < n:
        raise DomainError(f"source {point.i} out of range")
    violations: List[str] = []
    if case == 1:
        members = tuple(sorted(term)) if term is not None else default_term(point.i, n)
        if point.i not in members:
            raise DomainError(f"term {members} does not contain source {point.i}")
        given = tuple(s for s in range(n) if s not in members)
        i_term = conditional_mutual_information(pmf, members, given).value
        checks = [("R_i", point.r_i, entropy(pmf, point.i).value), ("R_ki", point.r_ki, i_term)]
        if not -REGION_EPS <= point.h_i <= i_term + REGION_EPS:
            violations.append(f"h_i={point.h_i:g} outside [0, {i_term:.6g}] (multi-source case 1)")
    elif case == 2:
        if point.j is None or point.j == point.i or not 0 <= point.j < n:
            raise DomainError("case 2 needs a second source j != i")
        h_ij = entropy(pmf, (point.i, point.j)).value
        i_ij = mutual_information(pmf, point.i, point.j).value
        checks = [
            ("R_i", point.r_i, h_ij),
            ("R_j", point.r_j, h_ij),
            ("R_ki", point.r_ki, i_ij),
            ("R_kj", point.r_kj, i_ij),
        ]
        if not -REGION_EPS <= point.h_j <= h_ij + REGION_EPS:
            violations.append(f"h_j={point.h_j:g} outside [0, {h_ij:.6g}] (multi-source case 2)")
    else:
        raise DomainError(f"unknown multi-source case {case!r}, expected 1 or 2")
    violations = [name for name, value, limit in checks if value < limit - REGION_EPS] + violations
    return not violations, tuple(violations)


# ============================================================================
# NETWORK DOCUMENTS
# ============================================================================

@dataclass(frozen=True)
class NetworkSpec:
    cfg: MultiSourceConfig
    adversaries: Tuple[Tuple[int, ...], ...]
    combination: bool = False
    seed: int = 0


def _term_key(raw) -> Tuple[int, ...]:
    if isinstance(raw, str):
        parts = [p for p in raw.replace(" ", "").split(",") if p]
    else:
        parts = list(raw)
    return tuple(sorted(int(p) for p in parts))


def load_network(doc: Mapping, base_dir=None) -> NetworkSpec:
    """
    Network document: k, pmf, optional allocations {"0,1": [1, 1]},
    links [{source: 0, secure: true}], adversaries (list of source lists or
    "all"), combination, seed.
    """
    if not isinstance(doc, Mapping):
        raise DomainError("network document must be a mapping")
    try:
        pmf = pmf_from_spec(doc.get("pmf", {"kind": "markov_chain", "p": 0.1, "q": 0.1}), base_dir)
        k = int(doc.get("k", 3))
        overrides = {_term_key(t): tuple(int(w) for w in ws) for t, ws in (doc.get("allocations") or {}).items()}
        secure = frozenset(int(l["source"]) for l in (doc.get("links") or []) if l.get("secure"))
        raw_adv = doc.get("adversaries", "all")
    except (TypeError, ValueError, KeyError, AttributeError) as e:
        raise DomainError(f"bad network document: {e}") from e
    cfg = MultiSourceConfig(pmf, k, overrides, secure)
    if raw_adv == "all":
        adversaries = tuple(all_adversaries(cfg.num_sources))
    else:
        adversaries = tuple(tuple(sorted(int(j) for j in a)) for a in raw_adv)
    return NetworkSpec(cfg, adversaries, bool(doc.get("combination", False)), int(doc.get("seed", 0)))
