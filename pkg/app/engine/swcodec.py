"""
Finite-K syndrome codec
=======================

Each source word of K bits is compressed by a seeded random linear map over
GF(2) into a private portion and a common portion:

    T_X = (V_X, V_CX) = (A_vx x, A_cx x)
    T_Y = (V_Y, V_CY) = (B_vy y, B_cy y)

Row counts follow the rate targets K*H(X|Y), K*H(Y|X) and an alpha split of
K*I(X;Y). Decoding is exhaustive MAP over the cosets consistent with the
received portions, so it is only offered for small K.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from app.engine import gf2
from app.engine.probcore import JointPmf, conditional_entropy, entropy, mutual_information, sample
from app.errors import DomainError, InternalError

logger = logging.getLogger(__name__)

MIN_K = 2
MAX_K = 16
# Exhaustive coset decoding limit
MAX_DECODE_K = 12
# Decoder trials per seeded chunk
TRIAL_CHUNK = 1000


class Portion(str, Enum):
    VX = "vx"
    CX = "cx"
    CY = "cy"
    VY = "vy"


PORTION_ORDER: Tuple[Portion, ...] = (Portion.VX, Portion.CX, Portion.CY, Portion.VY)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class SourceRealization:
    """One block of K symbols per source, packed LSB-first into integers."""
    k: int
    words: Tuple[int, ...]

    def __post_init__(self):
        words = tuple(int(w) for w in self.words)
        for w in words:
            if not 0 <= w < (1 << self.k):
                raise DomainError(f"word {w} does not fit in {self.k} bits")
        object.__setattr__(self, "words", words)

    @classmethod
    def pair(cls, k: int, x: int, y: int) -> "SourceRealization":
        return cls(k, (x, y))

    @property
    def x_bits(self) -> int:
        return self.words[0]

    @property
    def y_bits(self) -> int:
        return self.words[1]


@dataclass(frozen=True)
class PortionLayout:
    """Row counts of V_X, V_CX, V_CY, V_Y at block length K."""
    k: int
    m_vx: int
    m_cx: int
    m_cy: int
    m_vy: int
    alpha: float = 0.5

    def __post_init__(self):
        for name in ("m_vx", "m_cx", "m_cy", "m_vy"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if self.m_vx + self.m_cx > self.k or self.m_vy + self.m_cy > self.k:
            raise DomainError(f"layout {self.describe()} needs more rows than K={self.k} per source")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must be in [0, 1], got {self.alpha}")

    def width(self, portion: Portion) -> int:
        return {
            Portion.VX: self.m_vx,
            Portion.CX: self.m_cx,
            Portion.CY: self.m_cy,
            Portion.VY: self.m_vy,
        }[Portion(portion)]

    @property
    def x_width(self) -> int:
        return self.m_vx + self.m_cx

    @property
    def y_width(self) -> int:
        return self.m_vy + self.m_cy

    @property
    def common_width(self) -> int:
        return self.m_cx + self.m_cy

    def describe(self) -> str:
        return f"{self.k}:{self.m_vx},{self.m_cx},{self.m_cy},{self.m_vy}"


def parse_layout(text: str, alpha: Optional[float] = None) -> PortionLayout:
    """Parse the `K:m_vx,m_cx,m_cy,m_vy` override format."""
    try:
        k_part, rows_part = text.split(":")
        k = int(k_part)
        m_vx, m_cx, m_cy, m_vy = (int(v) for v in rows_part.split(","))
    except ValueError as e:
        raise DomainError(f"bad layout '{text}', expected K:m_vx,m_cx,m_cy,m_vy") from e
    if alpha is None:
        pool = m_cx + m_cy
        alpha = m_cx / pool if pool else 0.5
    return PortionLayout(k, m_vx, m_cx, m_cy, m_vy, alpha)


def _check_two_binary(pmf: JointPmf) -> None:
    if pmf.alphabet_sizes != (2, 2):
        raise DomainError(f"the syndrome codec needs two binary sources, got alphabets {pmf.alphabet_sizes}")


def _check_k(k: int) -> None:
    if not MIN_K <= k <= MAX_K:
        raise DomainError(f"K={k} outside supported range [{MIN_K}, {MAX_K}]")


def build_layout(pmf: JointPmf, k: int, alpha: float) -> PortionLayout:
    """
    Row counts nearest to the rate targets.

    Private rows round K*H(X|Y) and K*H(Y|X) half-up; the common pool rounds
    K*I(X;Y) half-up and X takes round_half_up(alpha * pool) of it.

    Args:
        pmf (JointPmf): Two-source binary statistics
        k (int): Block length
        alpha (float): Share of the common pool produced by X

    Returns:
        PortionLayout: Layout satisfying the per-source rank limit K
    """
    _check_two_binary(pmf)
    _check_k(int(k))
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must be in [0, 1], got {alpha}")
    h_x_y = conditional_entropy(pmf, 0, 1).value
    h_y_x = conditional_entropy(pmf, 1, 0).value
    i_xy = mutual_information(pmf, 0, 1).value

    m_vx = round_half_up(k * h_x_y)
    m_vy = round_half_up(k * h_y_x)
    pool = round_half_up(k * i_xy)
    m_cx = round_half_up(alpha * pool)
    m_cy = pool - m_cx

    # Rounding can ask for K+1 rows on one side; take the row back from
    # whichever count was rounded up.
    if m_vx + m_cx > k:
        if m_cx > alpha * pool:
            m_cx -= 1
            m_cy += 1
        else:
            m_vx -= 1
        logger.warning("Rebalanced X rows to fit K=%d: m_vx=%d m_cx=%d", k, m_vx, m_cx)
    if m_vy + m_cy > k:
        if m_cy > (1.0 - alpha) * pool and m_vx + m_cx < k:
            m_cy -= 1
            m_cx += 1
        else:
            m_vy -= 1
        logger.warning("Rebalanced Y rows to fit K=%d: m_vy=%d m_cy=%d", k, m_vy, m_cy)
    return PortionLayout(int(k), m_vx, m_cx, m_cy, m_vy, float(alpha))


def corner_layout(pmf: JointPmf, k: int, extra: int = 1) -> PortionLayout:
    """Slepian-Wolf corner R_X = H(X|Y), R_Y = H(Y) plus `extra` rows per source."""
    _check_two_binary(pmf)
    _check_k(int(k))
    m_vx = min(k, round_half_up(k * conditional_entropy(pmf, 0, 1).value) + extra)
    m_vy = round_half_up(k * conditional_entropy(pmf, 1, 0).value)
    pool = round_half_up(k * mutual_information(pmf, 0, 1).value)
    m_cy = min(pool, k - m_vy)
    m_vy = min(k - m_cy, m_vy + extra)
    return PortionLayout(int(k), m_vx, 0, m_cy, m_vy, 0.0)


@dataclass(frozen=True, eq=False)
class LinearEncoder:
    """Four GF(2) parity-check maps; [A_vx; A_cx] and [B_vy; B_cy] have full row rank."""
    layout: PortionLayout
    a_vx: np.ndarray
    a_cx: np.ndarray
    b_vy: np.ndarray
    b_cy: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        lay = self.layout
        expected = {
            "a_vx": (lay.m_vx, lay.k),
            "a_cx": (lay.m_cx, lay.k),
            "b_vy": (lay.m_vy, lay.k),
            "b_cy": (lay.m_cy, lay.k),
        }
        for name, shape in expected.items():
            M = np.asarray(getattr(self, name), dtype=np.uint8).reshape(shape)
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        if gf2.rank(np.vstack([self.a_vx, self.a_cx])) != lay.x_width:
            raise DomainError("stacked X encoder is not full row rank")
        if gf2.rank(np.vstack([self.b_vy, self.b_cy])) != lay.y_width:
            raise DomainError("stacked Y encoder is not full row rank")

    @classmethod
    def random(cls, layout: PortionLayout, seed: int) -> "LinearEncoder":
        x_seq, y_seq = np.random.SeedSequence(int(seed)).spawn(2)
        ax = gf2.random_full_row_rank(layout.x_width, layout.k, np.random.default_rng(x_seq))
        by = gf2.random_full_row_rank(layout.y_width, layout.k, np.random.default_rng(y_seq))
        return cls(
            layout=layout,
            a_vx=ax[: layout.m_vx],
            a_cx=ax[layout.m_vx:],
            b_vy=by[: layout.m_vy],
            b_cy=by[layout.m_vy:],
            seed=int(seed),
        )

    @property
    def k(self) -> int:
        return self.layout.k

    def matrix(self, portion: Portion) -> np.ndarray:
        return {
            Portion.VX: self.a_vx,
            Portion.CX: self.a_cx,
            Portion.CY: self.b_cy,
            Portion.VY: self.b_vy,
        }[Portion(portion)]

    def portion(self, portion: Portion, x_words, y_words) -> np.ndarray:
        """Vectorised portion values; x_words and y_words broadcast together."""
        portion = Portion(portion)
        src = x_words if portion in (Portion.VX, Portion.CX) else y_words
        return gf2.apply(self.matrix(portion), src, self.k)

    @cached_property
    def _tables(self) -> Dict[Portion, np.ndarray]:
        words = np.arange(1 << self.k, dtype=np.int64)
        return {p: gf2.apply(self.matrix(p), words, self.k) for p in PORTION_ORDER}


@dataclass(frozen=True)
class CodewordBundle:
    """The two syndromes T_X = (V_X, V_CX) and T_Y = (V_Y, V_CY)."""
    layout: PortionLayout
    v_x: int
    v_cx: int
    v_cy: int
    v_y: int

    def __post_init__(self):
        for p in PORTION_ORDER:
            v = self.value(p)
            if not 0 <= v < (1 << self.layout.width(p)):
                raise DomainError(f"portion {p.value}={v} does not fit in {self.layout.width(p)} bits")

    def value(self, portion: Portion) -> int:
        return {
            Portion.VX: self.v_x,
            Portion.CX: self.v_cx,
            Portion.CY: self.v_cy,
            Portion.VY: self.v_y,
        }[Portion(portion)]

    def to_hex(self) -> Dict[str, str]:
        return {p.value: format(self.value(p), "x") for p in PORTION_ORDER}


@dataclass(frozen=True)
class SplitCodeword:
    """W = w1 + m1 * w2 with w1 = W mod m1."""
    w1: int
    w2: int
    m1: int

    def join(self) -> int:
        return self.w1 + self.m1 * self.w2


def split_codeword(w: int, m1: int) -> SplitCodeword:
    w, m1 = int(w), int(m1)
    if m1 < 1:
        raise DomainError(f"modulus must be >= 1, got {m1}")
    if w < 0:
        raise DomainError(f"codeword index must be >= 0, got {w}")
    w1 = w % m1
    return SplitCodeword(w1=w1, w2=(w - w1) // m1, m1=m1)


def encode(enc: LinearEncoder, real: SourceRealization) -> CodewordBundle:
    if real.k != enc.k or len(real.words) != 2:
        raise DomainError(f"realization (K={real.k}, {len(real.words)} sources) does not match encoder K={enc.k}")
    x, y = real.x_bits, real.y_bits
    vals = {p: int(enc.portion(p, x, y)) for p in PORTION_ORDER}
    return CodewordBundle(enc.layout, vals[Portion.VX], vals[Portion.CX], vals[Portion.CY], vals[Portion.VY])


# ============================================================================
# DECODING
# ============================================================================

def _log_table(pmf: JointPmf) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(pmf.probs)


def _pair_loglik(log_p: np.ndarray, xs: np.ndarray, ys: np.ndarray, k: int) -> np.ndarray:
    """log p(x, y) for all candidate pairs, from symbol-pair counts."""
    mask = (1 << k) - 1
    x = xs[:, None]
    y = ys[None, :]
    n11 = gf2.popcount(x & y)
    n10 = gf2.popcount(x & ~y & mask)
    n01 = gf2.popcount(~x & y & mask)
    n00 = k - n11 - n10 - n01
    out = np.zeros(n11.shape)
    for n_ab, lp in ((n00, log_p[0, 0]), (n01, log_p[0, 1]), (n10, log_p[1, 0]), (n11, log_p[1, 1])):
        # 0 * log 0 counts as 0
        out = out + np.where(n_ab > 0, n_ab * lp, 0.0)
    return out


def _candidates(table: Dict[Portion, np.ndarray], constraints: Dict[Portion, int]) -> np.ndarray:
    ok = np.ones_like(next(iter(table.values())), dtype=bool)
    for p, v in constraints.items():
        ok &= table[p] == v
    return np.nonzero(ok)[0].astype(np.int64)


def decode(enc: LinearEncoder, bundle: CodewordBundle, pmf: JointPmf) -> Tuple[SourceRealization, float]:
    """
    Joint MAP decoder over all four portions.

    Ties go to the lexicographically smallest (x, y).

    Returns:
        Tuple[SourceRealization, float]: decoded pair and its posterior
    """
    _check_two_binary(pmf)
    if enc.k > MAX_DECODE_K:
        raise DomainError(f"exhaustive decoding supports K <= {MAX_DECODE_K}, got {enc.k}")
    tables = enc._tables
    xs = _candidates(tables, {Portion.VX: bundle.v_x, Portion.CX: bundle.v_cx})
    ys = _candidates(tables, {Portion.VY: bundle.v_y, Portion.CY: bundle.v_cy})
    if xs.size == 0 or ys.size == 0:
        raise InternalError("no source pair is consistent with the received portions")
    ll = _pair_loglik(_log_table(pmf), xs, ys, enc.k)
    # argmax returns the first maximum in (x, y) row-major order
    flat = int(np.argmax(ll))
    ix, iy = divmod(flat, ys.size)
    best = ll[ix, iy]
    if np.isneginf(best):
        posterior = 0.0
    else:
        posterior = float(1.0 / math.fsum(np.exp(ll - best).ravel()))
    return SourceRealization.pair(enc.k, int(xs[ix]), int(ys[iy])), posterior


def decode_source(enc: LinearEncoder, bundle: CodewordBundle, pmf: JointPmf, source: str = "x") -> Tuple[int, float]:
    """
    Three-portion decoder: X from (V_X, V_CX, V_CY) or Y from (V_Y, V_CY, V_CX),
    MAP over the source with the other source marginalised.
    """
    _check_two_binary(pmf)
    if enc.k > MAX_DECODE_K:
        raise DomainError(f"exhaustive decoding supports K <= {MAX_DECODE_K}, got {enc.k}")
    tables = enc._tables
    if source == "x":
        own = _candidates(tables, {Portion.VX: bundle.v_x, Portion.CX: bundle.v_cx})
        other = _candidates(tables, {Portion.CY: bundle.v_cy})
        ll = _pair_loglik(_log_table(pmf), own, other, enc.k)
    elif source == "y":
        own = _candidates(tables, {Portion.VY: bundle.v_y, Portion.CY: bundle.v_cy})
        other = _candidates(tables, {Portion.CX: bundle.v_cx})
        ll = _pair_loglik(_log_table(pmf), other, own, enc.k).T
    else:
        raise DomainError(f"source must be 'x' or 'y', got {source!r}")
    if own.size == 0:
        raise InternalError("no source word is consistent with the received portions")
    marginal = logsumexp(ll, axis=1)
    i = int(np.argmax(marginal))
    if np.isneginf(marginal[i]):
        return int(own[i]), 0.0
    return int(own[i]), float(1.0 / math.fsum(np.exp(marginal - marginal[i])))


@dataclass(frozen=True)
class DecoderTrialReport:
    trials: int
    errors: int
    seed: int
    layout: str

    @property
    def error_rate(self) -> float:
        return self.errors / self.trials if self.trials else 0.0


def _block_words(samples: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    blocks = samples.reshape(-1, k, samples.shape[1])
    return gf2.bits_to_int(blocks[:, :, 0]), gf2.bits_to_int(blocks[:, :, 1])


def decoder_error_rate(enc: LinearEncoder, pmf: JointPmf, trials: int, seed: int, jobs: int = 1) -> DecoderTrialReport:
    """
    Seeded Monte-Carlo block error rate of `decode`.

    Trials are cut into fixed chunks with one spawned seed each, so the
    result depends on (trials, seed) only, never on `jobs`.
    """
    _check_two_binary(pmf)
    trials = int(trials)
    parts = max(1, math.ceil(trials / TRIAL_CHUNK))
    bounds = [min(trials, p * TRIAL_CHUNK) for p in range(parts + 1)]
    seqs = np.random.SeedSequence(int(seed)).spawn(parts)

    def _run(idx: int) -> int:
        n = int(bounds[idx + 1] - bounds[idx])
        if n == 0:
            return 0
        rng = np.random.default_rng(seqs[idx])
        xs, ys = _block_words(sample(pmf, n * enc.k, rng), enc.k)
        errors = 0
        for x, y in zip(xs, ys):
            real = SourceRealization.pair(enc.k, int(x), int(y))
            decoded, _ = decode(enc, encode(enc, real), pmf)
            errors += decoded != real
        return errors

    with ThreadPoolExecutor(max_workers=max(1, int(jobs))) as pool:
        errors = sum(pool.map(_run, range(parts)))
    logger.debug("Decoder trials K=%d layout=%s: %d/%d errors", enc.k, enc.layout.describe(), errors, trials)
    return DecoderTrialReport(trials=trials, errors=int(errors), seed=int(seed), layout=enc.layout.describe())


def golden_record(enc: LinearEncoder, real: SourceRealization) -> Dict:
    """Structured record of one encoding, for pinned regression files."""
    bundle = encode(enc, real)
    return {
        "seed": enc.seed,
        "k": enc.k,
        "layout": enc.layout.describe(),
        "x": format(real.x_bits, "x"),
        "y": format(real.y_bits, "x"),
        "bundle": bundle.to_hex(),
    }


# ============================================================================
# MULTI-SOURCE
# ============================================================================

@dataclass(frozen=True, eq=False)
class MultiLinearEncoder:
    """
    One stacked full-row-rank GF(2) map per source; rows are split into named
    segments (private word first, then common shares).
    """
    k: int
    segments: Tuple[Tuple[Tuple[str, int], ...], ...]
    matrices: Tuple[np.ndarray, ...] = field(repr=False)
    seed: Optional[int] = None

    @classmethod
    def random(cls, k: int, segments: Sequence[Sequence[Tuple[str, int]]], seed: int) -> "MultiLinearEncoder":
        segs = tuple(tuple((str(name), int(w)) for name, w in src) for src in segments)
        seqs = np.random.SeedSequence(int(seed)).spawn(len(segs))
        mats = []
        for i, (src, seq) in enumerate(zip(segs, seqs)):
            rows = sum(w for _, w in src)
            if rows > k:
                raise DomainError(f"source {i} needs {rows} rows, more than K={k}")
            M = gf2.random_full_row_rank(rows, k, np.random.default_rng(seq))
            M.setflags(write=False)
            mats.append(M)
        return cls(k=int(k), segments=segs, matrices=tuple(mats), seed=int(seed))

    @property
    def num_sources(self) -> int:
        return len(self.segments)

    def width(self, name: str) -> int:
        for src in self.segments:
            for seg, w in src:
                if seg == name:
                    return w
        raise DomainError(f"unknown segment '{name}'")

    def owner(self, name: str) -> int:
        for i, src in enumerate(self.segments):
            if any(seg == name for seg, _ in src):
                return i
        raise DomainError(f"unknown segment '{name}'")

    def encode_source(self, i: int, words) -> Dict[str, np.ndarray]:
        """Segment values of source i for every word in `words` (any shape)."""
        out: Dict[str, np.ndarray] = {}
        row = 0
        M = self.matrices[i]
        for name, w in self.segments[i]:
            out[name] = gf2.apply(M[row: row + w], words, self.k)
            row += w
        return out


def layout_rates(layout: PortionLayout) -> Dict[str, float]:
    k = float(layout.k)
    return {
        "r_vx": layout.m_vx / k,
        "r_cx": layout.m_cx / k,
        "r_cy": layout.m_cy / k,
        "r_vy": layout.m_vy / k,
        "r_common": layout.common_width / k,
    }


def rate_targets(pmf: JointPmf) -> Dict[str, float]:
    return {
        "h_x_given_y": conditional_entropy(pmf, 0, 1).value,
        "h_y_given_x": conditional_entropy(pmf, 1, 0).value,
        "i_xy": mutual_information(pmf, 0, 1).value,
        "h_xy": entropy(pmf, (0, 1)).value,
    }
