"""
Shannon cipher layer over the syndrome codec.

The private portions are split into two power-of-two parts
(W_X1, W_X2 from V_X; W_Y1, W_Y2 from V_Y) and, together with the common
portions, masked by XOR with key words. One common portion is emitted in the
clear; its key word is the long key that the other components reuse. In the
composite variant each component's mask is the common key followed by a fresh
short supplement reaching the component width.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.engine import gf2
from app.engine.oracle import ObservationMap, concat_labels, exact_conditional_entropy
from app.engine.probcore import JointPmf, conditional_entropy, entropy, mutual_information
from app.engine.swcodec import CodewordBundle, LinearEncoder, Portion, PortionLayout, split_codeword
from app.errors import DomainError

logger = logging.getLogger(__name__)

REGION_EPS = 1e-12
CONVERSE_EPS = 1e-9

X_COMPONENTS = ("x1", "x2", "cx")
Y_COMPONENTS = ("y1", "y2", "cy")
COMPONENTS = X_COMPONENTS + Y_COMPONENTS


@dataclass(frozen=True)
class CipherCase:
    id: int
    leaked: Tuple[str, ...]
    secret: Tuple[str, ...]
    key_portion: str
    label: str

    @classmethod
    def of(cls, case_id: int) -> "CipherCase":
        try:
            return CIPHER_CASES[int(case_id)]
        except (KeyError, ValueError, TypeError):
            raise DomainError(f"unknown cipher case {case_id!r}, expected 1..5")

    def with_key_portion(self, key_portion: str) -> "CipherCase":
        if key_portion not in ("cx", "cy"):
            raise DomainError(f"key portion must be 'cx' or 'cy', got {key_portion!r}")
        return CipherCase(self.id, self.leaked, self.secret, key_portion, self.label)

    @property
    def leaked_components(self) -> Tuple[str, ...]:
        comps: Tuple[str, ...] = ()
        if "x" in self.leaked:
            comps += X_COMPONENTS
        if "y" in self.leaked:
            comps += Y_COMPONENTS
        return comps

    @property
    def masked_components(self) -> Tuple[str, ...]:
        return tuple(c for c in COMPONENTS if c != self.key_portion)


CIPHER_CASES: Dict[int, CipherCase] = {
    1: CipherCase(1, ("x", "y"), ("x", "y"), "cy", "both leaked, both secret"),
    2: CipherCase(2, ("x", "y"), ("x",), "cy", "both leaked, X secret"),
    3: CipherCase(3, ("x",), ("x", "y"), "cy", "X leaked, both secret"),
    4: CipherCase(4, ("x",), ("y",), "cy", "X leaked, Y secret"),
    5: CipherCase(5, ("x",), ("x",), "cx", "X leaked, X secret"),
}


class KeyVariant(str, Enum):
    LONG = "long"
    COMPOSITE = "composite"


class KeyProvenance(str, Enum):
    REUSED_COMMON = "reused_common"
    SHORT_SUPPLEMENT = "short_supplement"
    RANDOM = "random"


@dataclass(frozen=True)
class SecurityTarget:
    h_x: float = 0.0
    h_y: float = 0.0
    h_xy: float = 0.0

    @classmethod
    def parse(cls, text: str, case: CipherCase) -> "SecurityTarget":
        """`h=0.5` sets the case's own target(s); `h_x=..,h_y=..` sets them by name."""
        values: Dict[str, float] = {}
        for item in text.split(","):
            if not item.strip():
                continue
            name, _, raw = item.partition("=")
            try:
                values[name.strip()] = float(raw)
            except ValueError as e:
                raise DomainError(f"bad security target '{item}'") from e
        if "h" in values:
            h = values.pop("h")
            for name in _primary_targets(case):
                values.setdefault(name, h)
        unknown = set(values) - {"h_x", "h_y", "h_xy"}
        if unknown:
            raise DomainError(f"unknown security targets {sorted(unknown)}")
        return cls(**values)


def _primary_targets(case: CipherCase) -> Tuple[str, ...]:
    return {1: ("h_xy",), 2: ("h_x",), 3: ("h_x", "h_y"), 4: ("h_y",), 5: ("h_x",)}[case.id]


def target_range_violations(case: CipherCase, target: SecurityTarget, pmf: JointPmf) -> List[str]:
    """Range conditions under which each case's region is stated."""
    h_x = entropy(pmf, 0).value
    h_y = entropy(pmf, 1).value
    h_xy = entropy(pmf, (0, 1)).value
    checks = {
        "h_xy": (target.h_xy, h_xy, "H(X,Y)"),
        "h_x": (target.h_x, h_x, "H(X)"),
        "h_y": (target.h_y, h_y, "H(Y)"),
    }
    out = []
    for name in _primary_targets(case):
        value, limit, label = checks[name]
        if value < 0 or value > limit + REGION_EPS:
            out.append(f"{name}={value:g} outside [0, {label}={limit:.6g}] (case {case.id}: {case.label})")
    return out


# ============================================================================
# SPLIT AND KEYS
# ============================================================================

@dataclass(frozen=True)
class SplitParams:
    """log2 of M_X1 and M_Y1; W_X2 and W_Y2 take the remaining private bits."""
    bits_x1: int
    bits_y1: int

    @classmethod
    def default(cls, layout: PortionLayout) -> "SplitParams":
        return cls((layout.m_vx + 1) // 2, (layout.m_vy + 1) // 2)

    def widths(self, layout: PortionLayout) -> Dict[str, int]:
        if not (0 <= self.bits_x1 <= layout.m_vx and 0 <= self.bits_y1 <= layout.m_vy):
            raise DomainError(f"split ({self.bits_x1}, {self.bits_y1}) does not fit layout {layout.describe()}")
        return {
            "x1": self.bits_x1,
            "x2": layout.m_vx - self.bits_x1,
            "cx": layout.m_cx,
            "y1": self.bits_y1,
            "y2": layout.m_vy - self.bits_y1,
            "cy": layout.m_cy,
        }


def split_bundle(bundle: CodewordBundle, split: SplitParams) -> Dict[str, int]:
    split.widths(bundle.layout)
    sx = split_codeword(bundle.v_x, 1 << split.bits_x1)
    sy = split_codeword(bundle.v_y, 1 << split.bits_y1)
    return {"x1": sx.w1, "x2": sx.w2, "cx": bundle.v_cx, "y1": sy.w1, "y2": sy.w2, "cy": bundle.v_cy}


def _split_arrays(enc: LinearEncoder, split: SplitParams, x, y) -> Dict[str, np.ndarray]:
    v_x = enc.portion(Portion.VX, x, y)
    v_y = enc.portion(Portion.VY, x, y)
    return {
        "x1": v_x & gf2.low_mask(split.bits_x1),
        "x2": v_x >> split.bits_x1,
        "cx": enc.portion(Portion.CX, x, y),
        "y1": v_y & gf2.low_mask(split.bits_y1),
        "y2": v_y >> split.bits_y1,
        "cy": enc.portion(Portion.CY, x, y),
    }


@dataclass(frozen=True)
class KeyWord:
    name: str
    width: int
    provenance: KeyProvenance
    offset: int


@dataclass(frozen=True)
class MaskSegment:
    """`width` bits of key word `word` from bit `word_lo`, XOR-ed at component bit `comp_lo`."""
    word: str
    word_lo: int
    comp_lo: int
    width: int


@dataclass(frozen=True)
class KeySchedule:
    case: CipherCase
    variant: KeyVariant
    target: SecurityTarget
    widths: Dict[str, int]
    words: Tuple[KeyWord, ...]
    masks: Dict[str, Tuple[MaskSegment, ...]] = field(default_factory=dict)
    independent: bool = False

    @property
    def total_bits(self) -> int:
        return sum(w.width for w in self.words)

    def word(self, name: str) -> KeyWord:
        for w in self.words:
            if w.name == name:
                return w
        raise DomainError(f"no key word '{name}'")

    def key_width(self, component: str) -> int:
        return sum(s.width for s in self.masks.get(component, ()))

    def mask_value(self, component: str, key):
        """Mask of `component` for key value(s) `key` (int or int64 array)."""
        out = 0
        for seg in self.masks.get(component, ()):
            lo = self.word(seg.word).offset + seg.word_lo
            out = out ^ (((key >> lo) & gf2.low_mask(seg.width)) << seg.comp_lo)
        return out

    def draw(self, seed: int) -> int:
        """One uniform key value for the whole schedule."""
        nbytes = (self.total_bits + 7) // 8
        raw = np.random.default_rng(int(seed)).bytes(nbytes)
        return int.from_bytes(raw, "little") & gf2.low_mask(self.total_bits)

    def describe(self) -> List[Dict]:
        return [
            {"name": w.name, "width": w.width, "provenance": w.provenance.value, "offset": w.offset}
            for w in self.words
        ]


def key_width_for(case: CipherCase, target: SecurityTarget, k: int) -> int:
    """ceil(K*h) bits for the case's target(s)."""
    h = {1: target.h_xy, 2: target.h_x, 3: max(target.h_x, target.h_y), 4: target.h_y, 5: target.h_x}[case.id]
    return max(0, math.ceil(k * h - REGION_EPS))


def build_keys(case: CipherCase, layout: PortionLayout, target: SecurityTarget,
               variant: KeyVariant = KeyVariant.LONG, split: Optional[SplitParams] = None,
               pmf: Optional[JointPmf] = None, independent: bool = False) -> KeySchedule:
    """
    Key schedule for one case.

    Long key: one word of ceil(K*h) bits; each masked component of width w
    uses its first min(w, ceil(K*h)) bits. Composite: the same common word
    followed by a fresh supplement of max(0, w - ceil(K*h)) bits, so every
    masked component is covered to its full width. Independent keys: a fresh
    uniform word for every component of every syndrome, the clear one included.

    Raises:
        DomainError: target outside the case's range (when pmf is given)
    """
    variant = KeyVariant(variant)
    split = split or SplitParams.default(layout)
    widths = split.widths(layout)
    if pmf is not None:
        problems = target_range_violations(case, target, pmf)
        if problems:
            raise DomainError("; ".join(problems))

    words: List[KeyWord] = []
    masks: Dict[str, Tuple[MaskSegment, ...]] = {}
    offset = 0

    if independent:
        for comp in COMPONENTS:
            w = widths[comp]
            name = f"k_{comp}"
            words.append(KeyWord(name, w, KeyProvenance.RANDOM, offset))
            masks[comp] = (MaskSegment(name, 0, 0, w),) if w else ()
            offset += w
        return KeySchedule(case, variant, target, widths, tuple(words), masks, True)

    n = key_width_for(case, target, layout.k)
    if n == 0:
        return KeySchedule(case, variant, target, widths, (), {})
    common = f"k{case.key_portion.upper()}"
    words.append(KeyWord(common, n, KeyProvenance.REUSED_COMMON, 0))
    offset = n
    for i, comp in enumerate(case.masked_components, start=1):
        w = widths[comp]
        segs = []
        if w:
            segs.append(MaskSegment(common, 0, 0, min(w, n)))
        if variant is KeyVariant.COMPOSITE and w > n:
            name = f"W{i}"
            words.append(KeyWord(name, w - n, KeyProvenance.SHORT_SUPPLEMENT, offset))
            segs.append(MaskSegment(name, 0, n, w - n))
            offset += w - n
        masks[comp] = tuple(segs)
    schedule = KeySchedule(case, variant, target, widths, tuple(words), masks)
    logger.debug("Case %d %s keys: %d bits in %d words", case.id, variant.value, schedule.total_bits, len(words))
    return schedule


def key_rates(keys: KeySchedule, k: int) -> Tuple[float, float]:
    """(R_kX, R_kY): distinct key bits used by each source's components, per symbol."""
    def _side(components):
        used = {seg.word for c in components for seg in keys.masks.get(c, ())}
        return sum(keys.word(name).width for name in used) / k
    return _side(X_COMPONENTS), _side(Y_COMPONENTS)


# ============================================================================
# ENCRYPTION
# ============================================================================

@dataclass(frozen=True)
class CipherBundle:
    layout: PortionLayout
    split: SplitParams
    components: Dict[str, int]

    @property
    def w_x_tuple(self) -> Tuple[int, int, int]:
        return tuple(self.components[c] for c in X_COMPONENTS)

    @property
    def w_y_tuple(self) -> Tuple[int, int, int]:
        return tuple(self.components[c] for c in Y_COMPONENTS)


def _check_schedule(keys: KeySchedule, layout: PortionLayout, split: SplitParams) -> None:
    if split.widths(layout) != keys.widths:
        raise DomainError("key schedule widths do not match the layout and split")
    for comp, segs in keys.masks.items():
        for seg in segs:
            if seg.comp_lo + seg.width > keys.widths[comp]:
                raise DomainError(f"key segment overruns component {comp}")


def encrypt(bundle: CodewordBundle, split: SplitParams, keys: KeySchedule, case: CipherCase,
            key_value: int) -> CipherBundle:
    if keys.case.id != case.id:
        raise DomainError(f"key schedule is for case {keys.case.id}, not case {case.id}")
    _check_schedule(keys, bundle.layout, split)
    plain = split_bundle(bundle, split)
    masked = {c: plain[c] ^ int(keys.mask_value(c, int(key_value))) for c in COMPONENTS}
    return CipherBundle(bundle.layout, split, masked)


def decrypt(cipher: CipherBundle, keys: KeySchedule, key_value: int) -> CodewordBundle:
    _check_schedule(keys, cipher.layout, cipher.split)
    plain = {c: cipher.components[c] ^ int(keys.mask_value(c, int(key_value))) for c in COMPONENTS}
    sp = cipher.split
    return CodewordBundle(
        cipher.layout,
        v_x=plain["x1"] + (plain["x2"] << sp.bits_x1),
        v_cx=plain["cx"],
        v_cy=plain["cy"],
        v_y=plain["y1"] + (plain["y2"] << sp.bits_y1),
    )


def cipher_view(enc: LinearEncoder, split: SplitParams, keys: KeySchedule, case: CipherCase) -> ObservationMap:
    """The wiretapper's view: every leaked syndrome's masked components."""
    _check_schedule(keys, enc.layout, split)
    comps = case.leaked_components
    width = sum(keys.widths[c] for c in comps)

    def _observe(words, key):
        plain = _split_arrays(enc, split, words[0], words[1])
        return concat_labels([(plain[c] ^ keys.mask_value(c, key), keys.widths[c]) for c in comps])

    return ObservationMap(_observe, width, keys.total_bits, f"case{case.id}:" + ",".join(comps))


def components_view(enc: LinearEncoder, split: SplitParams, comps: Sequence[str]) -> ObservationMap:
    """Unmasked components, for the direct-part uncertainty checks."""
    widths = split.widths(enc.layout)

    def _observe(words, key):
        plain = _split_arrays(enc, split, words[0], words[1])
        return concat_labels([(plain[c], widths[c]) for c in comps])

    return ObservationMap(_observe, sum(widths[c] for c in comps), 0, ",".join(comps) or "nothing")


# ============================================================================
# SECURITY MEASUREMENT
# ============================================================================

@dataclass(frozen=True)
class SecurityReport:
    """Equivocations per symbol given the wiretapper's view."""
    h_x_measured: float
    h_y_measured: float
    h_xy_measured: float
    k: int
    key_bits: int

    def row(self) -> Dict:
        return {
            "k": self.k,
            "key_bits": self.key_bits,
            "h_x": self.h_x_measured,
            "h_y": self.h_y_measured,
            "h_xy": self.h_xy_measured,
        }


def measure_security(pmf: JointPmf, k: int, enc: LinearEncoder, keys: KeySchedule, case: CipherCase,
                     split: Optional[SplitParams] = None, jobs: int = 1) -> SecurityReport:
    split = split or SplitParams.default(enc.layout)
    view = cipher_view(enc, split, keys, case)
    h = {
        name: exact_conditional_entropy(pmf, k, view, subset, jobs).h_bits / k
        for name, subset in (("x", 0), ("y", 1), ("xy", (0, 1)))
    }
    return SecurityReport(h["x"], h["y"], h["xy"], k, keys.total_bits)


@dataclass(frozen=True)
class InequalityCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.lhs - self.rhs


def direct_part_inequalities(pmf: JointPmf, k: int, enc: LinearEncoder,
                             split: Optional[SplitParams] = None, jobs: int = 1) -> List[InequalityCheck]:
    """
    Uncertainty lower bounds the masking constructions rely on, per symbol.

    W_X stands for the private parts (W_X1, W_X2) and W_Y for (W_Y1, W_Y2).
    A negative slack is the finite-K epsilon these bounds tolerate.
    """
    split = split or SplitParams.default(enc.layout)
    w = split.widths(enc.layout)
    i_xy = mutual_information(pmf, 0, 1).value
    h_x_y = conditional_entropy(pmf, 0, 1).value
    log_m = {c: w[c] / k for c in COMPONENTS}
    table = [
        ("H(X|WX2,WY)", 0, ("x2", "y1", "y2"), i_xy + log_m["x1"]),
        ("H(Y|WX,WY2)", 1, ("x1", "x2", "y2"), i_xy + log_m["y1"]),
        ("H(X|WX,WY2)", 0, ("x1", "x2", "y2"), i_xy),
        ("H(X|WX,WY,WCY)", 0, ("x1", "x2", "y1", "y2", "cy"), log_m["cx"]),
        ("H(Y|WX,WY,WCY)", 1, ("x1", "x2", "y1", "y2", "cy"), log_m["cx"]),
        ("H(X|WY,WCY)", 0, ("y1", "y2", "cy"), h_x_y + log_m["cx"]),
        ("H(Y|WY,WCY)", 1, ("y1", "y2", "cy"), log_m["cx"]),
        ("H(Y|WX,WCX,WCY,WY2)", 1, ("x1", "x2", "cx", "cy", "y2"), log_m["y1"]),
        ("H(Y|WX,WCX,WCY)", 1, ("x1", "x2", "cx", "cy"), log_m["y1"] + log_m["y2"]),
        ("H(X|WX2,WCY)", 0, ("x2", "cy"), log_m["x1"] + log_m["cx"]),
        ("H(Y|WX2,WCY)", 1, ("x2", "cy"), log_m["y1"] + log_m["y2"] + log_m["cx"]),
    ]
    out = []
    for name, source, comps, rhs in table:
        lhs = exact_conditional_entropy(pmf, k, components_view(enc, split, comps), source, jobs).h_bits / k
        out.append(InequalityCheck(name, lhs, rhs))
    return out


# ============================================================================
# RATE REGIONS
# ============================================================================

@dataclass(frozen=True)
class RatePoint:
    r_x: float
    r_y: float
    r_kx: float
    r_ky: float
    h_x: float = 0.0
    h_y: float = 0.0
    h_xy: float = 0.0

    def __post_init__(self):
        if min(self.r_x, self.r_y, self.r_kx, self.r_ky) < 0:
            raise DomainError("rates must be non-negative")

    @property
    def target(self) -> SecurityTarget:
        return SecurityTarget(self.h_x, self.h_y, self.h_xy)


@dataclass(frozen=True)
class RegionCheck:
    member: bool
    violations: Tuple[str, ...]


def region_constraints(point: RatePoint, case: CipherCase, pmf: JointPmf) -> List[Tuple[str, float, float]]:
    """(name, value, lower limit) for every inequality of the case's region."""
    h_x_y = conditional_entropy(pmf, 0, 1).value
    h_y_x = conditional_entropy(pmf, 1, 0).value
    h_xy = entropy(pmf, (0, 1)).value
    out = [
        ("R_X", point.r_x, h_x_y),
        ("R_Y", point.r_y, h_y_x),
        ("R_X+R_Y", point.r_x + point.r_y, h_xy),
    ]
    if case.id == 1:
        out += [("R_kX", point.r_kx, point.h_xy), ("R_kY", point.r_ky, point.h_xy)]
    elif case.id in (2, 3):
        out += [("R_kX", point.r_kx, point.h_x), ("R_kY", point.r_ky, point.h_y)]
    elif case.id == 4:
        out += [("R_kX", point.r_kx, 0.0), ("R_kY", point.r_ky, point.h_y)]
    else:
        out += [("R_kX", point.r_kx, point.h_x), ("R_kY", point.r_ky, 0.0)]
    return out


def region_member(point: RatePoint, case: CipherCase, pmf: JointPmf) -> RegionCheck:
    """Boundary-inclusive membership with the list of violated constraints."""
    if pmf.num_sources != 2:
        raise DomainError("rate regions are defined for two sources")
    case = CipherCase.of(case.id if isinstance(case, CipherCase) else case)
    violations = [name for name, value, limit in region_constraints(point, case, pmf) if value < limit - REGION_EPS]
    violations += target_range_violations(case, point.target, pmf)
    return RegionCheck(not violations, tuple(violations))


@dataclass(frozen=True)
class ConverseGap:
    slacks: Dict[str, float]

    @property
    def violated(self) -> bool:
        return any(v < -CONVERSE_EPS for v in self.slacks.values())


def converse_gap(point: RatePoint, case: CipherCase, measured: SecurityReport) -> ConverseGap:
    """
    R_k minus the equivocation each constrained key must account for.

    A leaked source is held to its measured equivocation. A source the
    wiretapper never sees is uncertain without any key, so only its target
    counts against the key rate.
    """
    h_x = measured.h_x_measured if "x" in case.leaked else point.h_x
    h_y = measured.h_y_measured if "y" in case.leaked else point.h_y
    if case.id == 1:
        slacks = {"R_kX": point.r_kx - measured.h_xy_measured, "R_kY": point.r_ky - measured.h_xy_measured}
    elif case.id in (2, 3):
        slacks = {"R_kX": point.r_kx - h_x, "R_kY": point.r_ky - h_y}
    elif case.id == 4:
        slacks = {"R_kY": point.r_ky - h_y}
    else:
        slacks = {"R_kX": point.r_kx - h_x}
    return ConverseGap(slacks)


def construction_point(enc: LinearEncoder, keys: KeySchedule) -> RatePoint:
    """Rate point realised by an encoder and a key schedule."""
    k = enc.k
    r_kx, r_ky = key_rates(keys, k)
    t = keys.target
    return RatePoint(enc.layout.x_width / k, enc.layout.y_width / k, r_kx, r_ky, t.h_x, t.h_y, t.h_xy)
