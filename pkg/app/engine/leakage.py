"""
Wiretap scenarios over syndrome portions and their exact leakage.

The leakage of target P given observed portions Q is K*H(P) - H(P^K | Q),
computed by the oracle on the realised code. Four scenarios on target X carry
closed-form intervals built from portion entropies; the report records the
smallest slack delta* under which the measured value falls inside.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from app.engine.oracle import ObservationMap, concat_labels, exact_mutual_information, exact_observation_entropy
from app.engine.probcore import JointPmf, SourceSubset, entropy, mutual_information
from app.engine.swcodec import (
    PORTION_ORDER,
    LinearEncoder,
    MultiLinearEncoder,
    Portion,
    PortionLayout,
    build_layout,
    parse_layout,
)
from app.errors import DomainError

logger = logging.getLogger(__name__)

BOUND_EPS = 1e-12


@dataclass(frozen=True)
class Tolerance:
    delta_bits: float = 0.0
    delta1_bits: float = 0.0

    def __post_init__(self):
        if self.delta_bits < 0 or self.delta1_bits < 0:
            raise DomainError("tolerances must be non-negative")
        if self.delta1_bits > self.delta_bits:
            raise DomainError(f"delta1 ({self.delta1_bits}) must not exceed delta ({self.delta_bits})")


@dataclass(frozen=True)
class WiretapScenario:
    observed: Tuple[Portion, ...]
    target: SourceSubset = field(default_factory=lambda: SourceSubset((0,)))
    tag: str = ""

    def __post_init__(self):
        seen = {Portion(p) for p in self.observed}
        object.__setattr__(self, "observed", tuple(p for p in PORTION_ORDER if p in seen))
        if not self.tag:
            object.__setattr__(self, "tag", "_".join(p.value for p in self.observed) or "none")

    @property
    def observed_set(self) -> frozenset:
        return frozenset(self.observed)


def parse_scenario(text: str, tag: str = "") -> WiretapScenario:
    """`vy,cy` -> scenario observing V_Y and V_CY, target X."""
    parts = [p.strip() for p in text.replace("+", ",").split(",") if p.strip()]
    try:
        return WiretapScenario(tuple(Portion(p) for p in parts), tag=tag)
    except ValueError as e:
        raise DomainError(f"unknown portion in scenario '{text}'") from e


def bounded_scenarios() -> List[WiretapScenario]:
    """The four scenarios on X whose leakage has a closed-form interval."""
    return [
        WiretapScenario((Portion.VX, Portion.VY), tag="vx_vy"),
        WiretapScenario((Portion.CX, Portion.CY), tag="cx_cy"),
        WiretapScenario((Portion.CX, Portion.CY, Portion.VY), tag="cx_cy_vy"),
        WiretapScenario((Portion.VY, Portion.CY), tag="vy_cy"),
    ]


@dataclass(frozen=True)
class PortionEntropies:
    """H(X^K) and the entropies of the realised portions, in bits per block."""
    h_source: float
    h_vx: float
    h_cx: float
    h_cy: float
    h_vy: float

    def of(self, portion: Portion) -> float:
        return {
            Portion.VX: self.h_vx,
            Portion.CX: self.h_cx,
            Portion.CY: self.h_cy,
            Portion.VY: self.h_vy,
        }[Portion(portion)]


@dataclass(frozen=True)
class BoundInterval:
    lower: Optional[float]
    upper: Optional[float]
    has_bound: bool


@dataclass(frozen=True)
class LeakageReport:
    scenario: WiretapScenario
    k: int
    measured_bits: float
    lower_bound_bits: Optional[float]
    upper_bound_bits: Optional[float]
    slack_used: Tolerance
    satisfied: bool
    delta_star: float
    layout: str = ""
    alpha: Optional[float] = None
    seed: Optional[int] = None
    note: str = ""

    @property
    def has_bound(self) -> bool:
        return self.lower_bound_bits is not None or self.upper_bound_bits is not None

    def row(self) -> Dict:
        return {
            "scenario": self.scenario.tag,
            "k": self.k,
            "alpha": self.alpha,
            "layout": self.layout,
            "measured_bits": self.measured_bits,
            "lower_bits": self.lower_bound_bits,
            "upper_bits": self.upper_bound_bits,
            "delta_bits": self.slack_used.delta_bits,
            "delta_star": self.delta_star,
            "satisfied": self.satisfied,
            "note": self.note,
        }


def portion_view(enc: LinearEncoder, observed: Iterable[Portion]) -> ObservationMap:
    """Observation of the given portions, concatenated in V_X, V_CX, V_CY, V_Y order."""
    seen = {Portion(p) for p in observed}
    portions = [p for p in PORTION_ORDER if p in seen]
    width = sum(enc.layout.width(p) for p in portions)

    def _observe(words, keys):
        x, y = words[0], words[1]
        return concat_labels([(enc.portion(p, x, y), enc.layout.width(p)) for p in portions])

    return ObservationMap(_observe, width, 0, "+".join(p.value for p in portions) or "nothing")


def portion_entropies(pmf: JointPmf, k: int, enc: LinearEncoder, jobs: int = 1) -> PortionEntropies:
    h = {p: exact_observation_entropy(pmf, k, portion_view(enc, [p]), jobs).h_bits for p in PORTION_ORDER}
    return PortionEntropies(
        h_source=k * entropy(pmf, 0).value,
        h_vx=h[Portion.VX],
        h_cx=h[Portion.CX],
        h_cy=h[Portion.CY],
        h_vy=h[Portion.VY],
    )


_VX_VY = frozenset({Portion.VX, Portion.VY})
_CX_CY = frozenset({Portion.CX, Portion.CY})
_CX_CY_VY = frozenset({Portion.CX, Portion.CY, Portion.VY})
_VY_CY = frozenset({Portion.VY, Portion.CY})


def carries_bound(scenario: WiretapScenario) -> bool:
    return tuple(scenario.target) == (0,) and scenario.observed_set in (_VX_VY, _CX_CY, _CX_CY_VY, _VY_CY)


def bound_interval(scenario: WiretapScenario, ent: PortionEntropies, tol: Tolerance) -> BoundInterval:
    """
    Closed-form leakage interval for the four bound-carrying scenarios.

    Any other scenario (or a target other than X) gives (None, None) with
    has_bound False.
    """
    d = tol.delta_bits
    if not carries_bound(scenario):
        return BoundInterval(None, None, False)
    obs = scenario.observed_set
    if obs == _VX_VY:
        return BoundInterval(None, ent.h_source - ent.h_cx - ent.h_cy + d, True)
    if obs in (_CX_CY, _CX_CY_VY):
        return BoundInterval(None, ent.h_source - ent.h_vx - ent.h_cy + d, True)
    if obs == _VY_CY:
        return BoundInterval(ent.h_cy - d, ent.h_source - ent.h_vx - ent.h_cx + d, True)
    return BoundInterval(None, None, False)


def minimal_slack(report: LeakageReport) -> float:
    """Smallest delta for which the measured leakage lies inside the interval."""
    d = report.slack_used.delta_bits
    candidates = [0.0]
    if report.upper_bound_bits is not None:
        candidates.append(report.measured_bits - (report.upper_bound_bits - d))
    if report.lower_bound_bits is not None:
        candidates.append((report.lower_bound_bits + d) - report.measured_bits)
    return max(candidates)


def build_report(scenario: WiretapScenario, k: int, measured: float, interval: BoundInterval, tol: Tolerance,
            note: str = "", **extra) -> LeakageReport:
    draft = LeakageReport(scenario, k, measured, interval.lower, interval.upper, tol, True, 0.0)
    delta_star = minimal_slack(draft)
    satisfied = delta_star <= tol.delta_bits + BOUND_EPS
    if interval.has_bound and not satisfied:
        logger.warning("Scenario %s at K=%d needs delta*=%.6g > delta=%.6g",
                       scenario.tag, k, delta_star, tol.delta_bits)
    note = note or ("" if interval.has_bound else "no bound")
    return LeakageReport(scenario, k, measured, interval.lower, interval.upper, tol, satisfied, delta_star,
                         note=note, **extra)


def measure_leakage(pmf: JointPmf, k: int, enc: LinearEncoder, scenario: WiretapScenario,
                    tol: Tolerance = Tolerance(), ent: Optional[PortionEntropies] = None,
                    jobs: int = 1) -> LeakageReport:
    """Exact leakage of `scenario` on the realised code plus its bound check."""
    if enc.k != k:
        raise DomainError(f"encoder K={enc.k} does not match K={k}")
    scenario.target.validate(pmf.num_sources)
    measured = exact_mutual_information(pmf, k, portion_view(enc, scenario.observed), scenario.target, jobs).h_bits
    measured = min(measured, k * entropy(pmf, scenario.target).value)
    interval = BoundInterval(None, None, False)
    if carries_bound(scenario):
        ent = ent or portion_entropies(pmf, k, enc, jobs)
        interval = bound_interval(scenario, ent, tol)
    return build_report(scenario, k, measured, interval, tol, layout=enc.layout.describe(),
                   alpha=enc.layout.alpha, seed=enc.seed)


def multi_source_leakage(pmf: JointPmf, k: int, encs: MultiLinearEncoder, i: int, j: int,
                         tol: Tolerance = Tolerance(), jobs: int = 1) -> LeakageReport:
    """
    I(S_i^K; T_{S_j}) where T_{S_j} is every segment source j transmits.

    For i != j the upper bound is K*I(S_i; S_j), since T_{S_j} is a function of
    S_j. For i == j there is no bound on the realised code: common shares may
    sit with other sources, so K*I(S_i; rest) only goes into the note.
    """
    n = pmf.num_sources
    if not (0 <= i < n and 0 <= j < n):
        raise DomainError(f"sources {i}, {j} out of range for {n} sources")
    if encs.num_sources != n or encs.k != k:
        raise DomainError("multi-source encoder does not match the pmf and K")
    segs = encs.segments[j]
    width = sum(w for _, w in segs)

    def _observe(words, keys):
        values = encs.encode_source(j, words[j])
        return concat_labels([(values[name], w) for name, w in segs])

    obs = ObservationMap(_observe, width, 0, f"T{j}")
    measured = exact_mutual_information(pmf, k, obs, i, jobs).h_bits
    rest = tuple(s for s in range(n) if s != i)
    if i == j:
        common = k * mutual_information(pmf, i, rest).value if rest else 0.0
        interval = BoundInterval(None, None, False)
        note = f"own link; K*I(S{i};rest)={common:.6g} bits"
    else:
        interval = BoundInterval(None, k * mutual_information(pmf, i, j).value + tol.delta_bits, True)
        note = "leakage through common information only"
    scenario = WiretapScenario((), SourceSubset((i,)), tag=f"S{i}|T{j}")
    return build_report(scenario, k, measured, interval, tol, seed=encs.seed, note=note)


def leakage_sweep(pmf: JointPmf, ks: Sequence[int], alphas: Sequence[float],
                  scenarios: Sequence[WiretapScenario], seed: int,
                  tol: Tolerance = Tolerance(), jobs: int = 1,
                  layouts: Sequence[Union[str, PortionLayout]] = ()) -> List[LeakageReport]:
    """
    One report per (K, alpha, scenario), ordered by K, then alpha, then scenario.

    Explicit `layouts` (objects or `K:m_vx,m_cx,m_cy,m_vy` strings) replace the
    ks x alphas grid and are swept in the given order.
    """
    if layouts:
        grid = [lay if isinstance(lay, PortionLayout) else parse_layout(str(lay)) for lay in layouts]
    else:
        grid = [build_layout(pmf, k, alpha) for k in ks for alpha in alphas]
    reports: List[LeakageReport] = []
    for layout in grid:
        k = layout.k
        enc = LinearEncoder.random(layout, seed)
        ent = portion_entropies(pmf, k, enc)
        with ThreadPoolExecutor(max_workers=max(1, int(jobs))) as pool:
            reports.extend(pool.map(lambda sc: measure_leakage(pmf, k, enc, sc, tol, ent), scenarios))
        logger.info("Leakage sweep %s: %d scenarios", layout.describe(), len(scenarios))
    return reports


def bound_coincidence(reports: Sequence[LeakageReport], tol: float = 1e-9) -> Dict[Tuple[int, Optional[float]], bool]:
    """Whether the cx_cy and cx_cy_vy scenarios measured the same leakage, per (K, alpha)."""
    by_key: Dict[Tuple[int, Optional[float]], Dict[str, float]] = {}
    for r in reports:
        if r.scenario.tag in ("cx_cy", "cx_cy_vy"):
            by_key.setdefault((r.k, r.alpha), {})[r.scenario.tag] = r.measured_bits
    return {
        key: math.isclose(v["cx_cy"], v["cx_cy_vy"], abs_tol=tol)
        for key, v in by_key.items()
        if len(v) == 2
    }
