"""
Exact finite-alphabet probability and information calculus
===========================================================

Dense joint probability tables over n sources and the information quantities
built on them: entropies, conditional entropies, (conditional) mutual
information, recursive co-information and the per-source entropy
decomposition into private and shared terms.

All quantities are in bits.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import entr

from app.errors import DomainError, ResourceError

logger = logging.getLogger(__name__)

# Largest dense table we agree to hold
MAX_TABLE_SIZE = 1 << 24
# Probabilities must sum to one within this
NORMALIZATION_TOL = 1e-12
# Entropies this far below zero are rounding noise and clamp to 0
CLAMP_TOL = 1e-9

PMF_SCHEMA_VERSION = 1

_LN2 = math.log(2.0)


class InfoKind(str, Enum):
    ENTROPY = "entropy"
    CONDITIONAL_ENTROPY = "conditional_entropy"
    MUTUAL_INFORMATION = "mutual_information"
    CONDITIONAL_MULTI_INFORMATION = "conditional_multi_information"


@dataclass(frozen=True)
class InfoQuantity:
    """A value in bits together with what kind of quantity it is."""
    value: float
    kind: InfoKind

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class SourceSubset:
    """Ordered set of source indices, e.g. S_t or its complement."""
    members: Tuple[int, ...]

    def __post_init__(self):
        members = tuple(int(m) for m in self.members)
        if not members:
            raise DomainError("source subset must not be empty")
        if len(set(members)) != len(members):
            raise DomainError(f"duplicate source index in {members}")
        if min(members) < 0:
            raise DomainError(f"negative source index in {members}")
        object.__setattr__(self, "members", members)

    @classmethod
    def of(cls, *members: int) -> "SourceSubset":
        return cls(tuple(members))

    def validate(self, num_sources: int) -> "SourceSubset":
        bad = [m for m in self.members if m >= num_sources]
        if bad:
            raise DomainError(f"source index {bad[0]} out of range for {num_sources} sources")
        return self

    def complement(self, num_sources: int) -> Tuple[int, ...]:
        return tuple(i for i in range(num_sources) if i not in self.members)

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)


SubsetLike = Union[SourceSubset, Sequence[int], int, None]


def _members(subset: SubsetLike) -> Tuple[int, ...]:
    if subset is None:
        return ()
    if isinstance(subset, SourceSubset):
        return subset.members
    if isinstance(subset, (int, np.integer)):
        return (int(subset),)
    members = tuple(int(m) for m in subset)
    if len(set(members)) != len(members):
        raise DomainError(f"duplicate source index in {members}")
    return members


@dataclass(frozen=True, eq=False)
class JointPmf:
    """
    Exact probability table over a finite product alphabet.

    `probs` has shape `alphabet_sizes`, axis i indexing the symbols of source i.
    The table is read-only after construction.
    """
    alphabet_sizes: Tuple[int, ...]
    probs: np.ndarray

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.alphabet_sizes)
        if not sizes:
            raise DomainError("a pmf needs at least one source")
        if min(sizes) < 2:
            raise DomainError(f"alphabet sizes must be >= 2, got {sizes}")
        total = math.prod(sizes)
        if total > MAX_TABLE_SIZE:
            raise ResourceError(f"table of {total} entries exceeds cap {MAX_TABLE_SIZE}")
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.size != total:
            raise DomainError(f"table has {probs.size} entries, expected {total} for {sizes}")
        probs = probs.reshape(sizes).copy()
        if not np.all(np.isfinite(probs)):
            raise DomainError("probabilities must be finite")
        if np.any(probs < 0):
            raise DomainError("probabilities must be non-negative")
        s = math.fsum(probs.ravel())
        if abs(s - 1.0) > NORMALIZATION_TOL:
            raise DomainError(f"probabilities sum to {s!r}, expected 1")
        probs.setflags(write=False)
        object.__setattr__(self, "alphabet_sizes", sizes)
        object.__setattr__(self, "probs", probs)

    # --------------- Shape ---------------

    @property
    def num_sources(self) -> int:
        return len(self.alphabet_sizes)

    @property
    def flat(self) -> np.ndarray:
        return self.probs.ravel()

    @property
    def size(self) -> int:
        return self.probs.size

    def marginal(self, members: Sequence[int]) -> np.ndarray:
        """Marginal table with axes in the order given by `members`."""
        members = tuple(members)
        SourceSubset(members).validate(self.num_sources)
        drop = tuple(i for i in range(self.num_sources) if i not in members)
        m = self.probs.sum(axis=drop) if drop else self.probs
        kept = [i for i in range(self.num_sources) if i in members]
        return np.transpose(m, [kept.index(i) for i in members])

    # --------------- Constructors ---------------

    @classmethod
    def dsbs(cls, p: float) -> "JointPmf":
        """Doubly symmetric binary source: X uniform, Y = X xor Bern(p)."""
        p = float(p)
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"crossover probability must be in [0, 1], got {p}")
        q = 0.5 * (1.0 - p)
        r = 0.5 * p
        return cls((2, 2), np.array([[q, r], [r, q]]))

    @classmethod
    def independent(cls, *marginals: Sequence[float]) -> "JointPmf":
        tables = [np.asarray(m, dtype=np.float64) for m in marginals]
        if not tables:
            raise DomainError("need at least one marginal")
        joint = tables[0]
        for t in tables[1:]:
            joint = np.multiply.outer(joint, t)
        return cls(tuple(len(t) for t in tables), joint)

    @classmethod
    def identical(cls, num_sources: int = 2, alphabet_size: int = 2) -> "JointPmf":
        """All sources equal to one uniform symbol."""
        sizes = (alphabet_size,) * num_sources
        probs = np.zeros(sizes)
        for a in range(alphabet_size):
            probs[(a,) * num_sources] = 1.0 / alphabet_size
        return cls(sizes, probs)

    @classmethod
    def from_function(cls, marginal: Sequence[float], f, out_size: int) -> "JointPmf":
        """Pair (X, f(X)) for a deterministic map f."""
        px = np.asarray(marginal, dtype=np.float64)
        probs = np.zeros((len(px), out_size))
        for a, pa in enumerate(px):
            probs[a, int(f(a))] += pa
        return cls((len(px), out_size), probs)

    @classmethod
    def markov_chain(cls, p: float, q: float) -> "JointPmf":
        """Binary chain X - Y - Z with X uniform, Y = X xor Bern(p), Z = Y xor Bern(q)."""
        probs = np.zeros((2, 2, 2))
        for x, y, z in itertools.product((0, 1), repeat=3):
            probs[x, y, z] = 0.5 * (p if x != y else 1 - p) * (q if y != z else 1 - q)
        return cls((2, 2, 2), probs)

    @classmethod
    def random(cls, alphabet_sizes: Sequence[int], rng: np.random.Generator,
               concentration: float = 1.0) -> "JointPmf":
        sizes = tuple(int(s) for s in alphabet_sizes)
        w = rng.dirichlet(np.full(math.prod(sizes), float(concentration)))
        # Dirichlet draws can miss 1 by an ulp or two
        w = w / math.fsum(w)
        return cls(sizes, w)

    # --------------- Serialization ---------------

    def to_dict(self) -> dict:
        return {
            "schema_version": PMF_SCHEMA_VERSION,
            "alphabet_sizes": list(self.alphabet_sizes),
            "probs": [float(v) for v in self.flat],
        }

    def to_json(self) -> str:
        # json writes floats with repr, which round-trips exactly
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "JointPmf":
        try:
            sizes = data["alphabet_sizes"]
            probs = data["probs"]
        except (KeyError, TypeError) as e:
            raise DomainError(f"pmf document is missing field {e}") from e
        return cls(tuple(sizes), np.asarray(probs, dtype=np.float64))

    @classmethod
    def from_json(cls, text: str) -> "JointPmf":
        return cls.from_dict(json.loads(text))


def load_pmf(path: Union[str, Path]) -> JointPmf:
    p = Path(path)
    with p.open("r", encoding="utf-8") as f:
        return JointPmf.from_json(f.read())


def pmf_from_spec(spec: dict, base_dir: Optional[Union[str, Path]] = None) -> JointPmf:
    """
    Build a pmf from a config block such as {kind: dsbs, p: 0.1}.

    Kinds: dsbs, table, file, markov_chain, independent, identical. Relative
    file paths resolve against base_dir.
    """
    if not isinstance(spec, dict):
        raise DomainError("pmf must be a mapping with a 'kind' field")
    kind = spec.get("kind", "dsbs")
    try:
        if kind == "dsbs":
            return JointPmf.dsbs(spec["p"])
        if kind == "table":
            return JointPmf(tuple(spec["alphabet_sizes"]), np.asarray(spec["probs"], dtype=np.float64))
        if kind == "file":
            path = Path(spec["path"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return load_pmf(path)
        if kind == "markov_chain":
            return JointPmf.markov_chain(spec["p"], spec["q"])
        if kind == "independent":
            return JointPmf.independent(*spec["marginals"])
        if kind == "identical":
            return JointPmf.identical(int(spec.get("num_sources", 2)), int(spec.get("alphabet_size", 2)))
    except KeyError as e:
        raise DomainError(f"pmf of kind '{kind}' is missing field {e}") from e
    except OSError as e:
        raise DomainError(f"cannot read pmf file: {e}") from e
    raise DomainError(f"unknown pmf kind '{kind}'")


# ============================================================================
# ENTROPIES
# ============================================================================

def _entropy_of_table(table: np.ndarray) -> float:
    h = math.fsum(entr(np.asarray(table, dtype=np.float64).ravel())) / _LN2
    return _clamp(h)


def _clamp(v: float) -> float:
    if -CLAMP_TOL < v < 0.0:
        return 0.0
    return v


def _h(pmf: JointPmf, members: Tuple[int, ...]) -> float:
    if not members:
        return 0.0
    return _entropy_of_table(pmf.marginal(tuple(sorted(members))))


def _check_disjoint(a: Tuple[int, ...], b: Tuple[int, ...]) -> None:
    overlap = set(a) & set(b)
    if overlap:
        raise DomainError(f"subsets overlap on sources {sorted(overlap)}")


def entropy(pmf: JointPmf, subset: SubsetLike) -> InfoQuantity:
    """
    Joint entropy H(subset) in bits.

    Args:
        pmf (JointPmf): Source statistics
        subset: Sources whose joint entropy is wanted

    Returns:
        InfoQuantity: Entropy, marginalising exactly over the complement
    """
    members = _members(subset)
    SourceSubset(members).validate(pmf.num_sources)
    return InfoQuantity(_h(pmf, members), InfoKind.ENTROPY)


def conditional_entropy(pmf: JointPmf, subset: SubsetLike, given: SubsetLike = None) -> InfoQuantity:
    members = _members(subset)
    cond = _members(given)
    SourceSubset(members).validate(pmf.num_sources)
    if cond:
        SourceSubset(cond).validate(pmf.num_sources)
    _check_disjoint(members, cond)
    v = _clamp(_h(pmf, members + cond) - _h(pmf, cond))
    return InfoQuantity(v, InfoKind.CONDITIONAL_ENTROPY)


def _pairwise_mi(pmf: JointPmf, a: Tuple[int, ...], b: Tuple[int, ...], c: Tuple[int, ...]) -> float:
    v = math.fsum([_h(pmf, a + c), _h(pmf, b + c), -_h(pmf, a + b + c), -_h(pmf, c)])
    return _clamp(v)


def mutual_information(pmf: JointPmf, a: SubsetLike, b: SubsetLike, given: SubsetLike = None) -> InfoQuantity:
    """I(A;B|C) between two (possibly multi-source) groups."""
    ma, mb, mc = _members(a), _members(b), _members(given)
    for grp in (ma, mb):
        SourceSubset(grp).validate(pmf.num_sources)
    if mc:
        SourceSubset(mc).validate(pmf.num_sources)
    _check_disjoint(ma, mb)
    _check_disjoint(ma + mb, mc)
    return InfoQuantity(_pairwise_mi(pmf, ma, mb, mc), InfoKind.MUTUAL_INFORMATION)


def _coinformation(pmf: JointPmf, members: Tuple[int, ...], given: Tuple[int, ...]) -> float:
    # I(A1;..;Ak|C) = I(A1;..;A(k-1)|C) - I(A1;..;A(k-1)|Ak,C)
    if len(members) == 2:
        return _pairwise_mi(pmf, members[:1], members[1:], given)
    head, last = members[:-1], members[-1]
    return _coinformation(pmf, head, given) - _coinformation(pmf, head, given + (last,))


def conditional_mutual_information(pmf: JointPmf, subset: SubsetLike, given: SubsetLike = None) -> InfoQuantity:
    """
    Mutual information among all sources of `subset` given `given`.

    Two members give the usual I(A;B|C). More members give the recursive
    co-information, which may be negative.
    """
    members = _members(subset)
    cond = _members(given)
    if len(members) < 2:
        raise DomainError("mutual information needs at least two sources")
    SourceSubset(members).validate(pmf.num_sources)
    if cond:
        SourceSubset(cond).validate(pmf.num_sources)
    _check_disjoint(members, cond)
    value = _coinformation(pmf, members, cond)
    kind = InfoKind.MUTUAL_INFORMATION if len(members) == 2 else InfoKind.CONDITIONAL_MULTI_INFORMATION
    return InfoQuantity(value, kind)


# ============================================================================
# DECOMPOSITION
# ============================================================================

class SignConvention(str, Enum):
    # co-information terms, every sign +1
    CO_INFORMATION = "co_information"
    # interaction information II_t = (-1)^t * CI_t, carried with sign (-1)^t
    INTERACTION = "interaction"


@dataclass(frozen=True)
class DecompositionTerm:
    descriptor: str
    members: Tuple[int, ...]
    given: Tuple[int, ...]
    order: int
    sign: int
    quantity: InfoQuantity

    @property
    def signed_value(self) -> float:
        return self.sign * self.quantity.value


def _describe(members: Tuple[int, ...], given: Tuple[int, ...], head: str) -> str:
    sep = "," if head == "H" else ";"
    body = sep.join(f"S{m}" for m in members)
    if given:
        body += "|" + ",".join(f"S{g}" for g in given)
    return f"{head}({body})"


def entropy_decomposition(pmf: JointPmf, i: int,
                          convention: Union[SignConvention, str] = SignConvention.CO_INFORMATION
                          ) -> List[DecompositionTerm]:
    """
    Split H(S_i) into its private term H(S_i|rest) and one shared term per
    subset S_t containing S_i (t = 2..n), each conditioned on the complement.

    The signed sum of the returned terms equals H(S_i).
    """
    n = pmf.num_sources
    if not 0 <= int(i) < n:
        raise DomainError(f"source index {i} out of range for {n} sources")
    i = int(i)
    convention = SignConvention(convention)
    rest = tuple(j for j in range(n) if j != i)

    terms: List[DecompositionTerm] = [
        DecompositionTerm(
            descriptor=_describe((i,), rest, "H"),
            members=(i,),
            given=rest,
            order=1,
            sign=1,
            quantity=conditional_entropy(pmf, (i,), rest),
        )
    ]
    for t in range(2, n + 1):
        for others in itertools.combinations(rest, t - 1):
            members = tuple(sorted((i,) + others))
            given = tuple(j for j in range(n) if j not in members)
            ci = conditional_mutual_information(pmf, members, given)
            if convention is SignConvention.INTERACTION:
                sign = -1 if t % 2 else 1
                quantity = InfoQuantity(sign * ci.value, ci.kind)
            else:
                sign = 1
                quantity = ci
            terms.append(DecompositionTerm(
                descriptor=_describe(members, given, "I"),
                members=members,
                given=given,
                order=t,
                sign=sign,
                quantity=quantity,
            ))
    return terms


def decomposition_sum(terms: Iterable[DecompositionTerm]) -> float:
    return math.fsum(t.signed_value for t in terms)


def shared_terms(pmf: JointPmf) -> List[Tuple[Tuple[int, ...], float]]:
    """Every subset S_t (t >= 2) with its co-information I(S_t|S_t^c)."""
    n = pmf.num_sources
    out = []
    for t in range(2, n + 1):
        for members in itertools.combinations(range(n), t):
            given = tuple(j for j in range(n) if j not in members)
            out.append((members, conditional_mutual_information(pmf, members, given).value))
    return out


# ============================================================================
# SAMPLES
# ============================================================================

def empirical_pmf(samples: Sequence[Sequence[int]], alphabet_sizes: Optional[Sequence[int]] = None) -> JointPmf:
    """
    Frequency estimate from a sequence of symbol tuples.

    Args:
        samples: One tuple of source symbols per observation
        alphabet_sizes: Alphabet per source; inferred from the data if omitted

    Returns:
        JointPmf: Relative frequencies
    """
    arr = np.asarray(samples, dtype=np.int64)
    if arr.size == 0:
        raise DomainError("empirical_pmf needs at least one sample")
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if np.any(arr < 0):
        raise DomainError("symbols must be non-negative")
    if alphabet_sizes is None:
        sizes = tuple(max(2, int(v) + 1) for v in arr.max(axis=0))
    else:
        sizes = tuple(int(s) for s in alphabet_sizes)
        if len(sizes) != arr.shape[1]:
            raise DomainError(f"samples have {arr.shape[1]} sources, alphabet_sizes has {len(sizes)}")
        if np.any(arr >= np.asarray(sizes)):
            raise DomainError("symbol outside its alphabet")
    flat_idx = np.ravel_multi_index(tuple(arr.T), sizes)
    counts = np.bincount(flat_idx, minlength=math.prod(sizes))
    return JointPmf(sizes, counts / float(arr.shape[0]))


def sample(pmf: JointPmf, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. symbol tuples; returns an (n, num_sources) int array."""
    idx = rng.choice(pmf.size, size=int(n), p=pmf.flat)
    return np.stack(np.unravel_index(idx, pmf.alphabet_sizes), axis=1).astype(np.int64)


def binary_entropy(p: float) -> float:
    """h_b(p) in bits."""
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))
