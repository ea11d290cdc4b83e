"""Exact combinatorial kernels behind the derivative recursion and its bounds.

Integer compositions, multi-index compositions, set partitions and the
little Schroeder numbers, all in exact (arbitrary-precision) integer
arithmetic.  Enumeration orders are deterministic, so enumerated objects
can serve as stable memoization keys elsewhere.  Everything here is a pure
function over immutable values; the enumeration generators are
single-consumer.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

__all__ = [
    "C_KAPPA",
    "MultiIndex",
    "Composition",
    "MultiIndexComposition",
    "SetPartition",
    "compositions",
    "multi_index_compositions",
    "set_partitions",
    "schroeder_hipparchus",
    "schroeder_hipparchus_sequence",
    "schroeder_hipparchus_by_composition_sum",
    "factorial_inequality_check",
    "composition_identity_check",
    "multi_indices_up_to",
    "kappa_asymptotic_log",
]

#: Growth constant of the little Schroeder numbers: kappa_n <= C_KAPPA**(n-1).
C_KAPPA = 3.0 + math.sqrt(8.0)


@dataclass(frozen=True)
class MultiIndex:
    """Finitely supported sequence of natural exponents.

    Coordinates are 1-based.  Only nonzero exponents are stored, as
    (coordinate, exponent) pairs with strictly ascending coordinates, so
    instances are canonical, hashable and usable as dictionary keys.

    >>> a = MultiIndex.make({1: 2, 3: 1})
    >>> a.order(), a.factorial(), a.label()
    (3, 2, '2e1+e3')
    """

    entries: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        last = 0
        for k, e in self.entries:
            if k <= last:
                raise ValueError("coordinates must be strictly ascending and >= 1")
            if e < 1:
                raise ValueError("stored exponents must be >= 1")
            last = k

    @staticmethod
    def make(exponents: Mapping[int, int] | Sequence[int]) -> "MultiIndex":
        """Build from a {coordinate: exponent} mapping or a dense list [a1, a2, ...]."""
        if isinstance(exponents, Mapping):
            items = exponents.items()
        else:
            items = enumerate(exponents, start=1)
        return MultiIndex(tuple(sorted((int(k), int(e)) for k, e in items if e)))

    @staticmethod
    def unit(k: int) -> "MultiIndex":
        """The k-th unit multi-index e_k."""
        return MultiIndex(((k, 1),))

    def order(self) -> int:
        """Total order |alpha| = sum of exponents."""
        return sum(e for _, e in self.entries)

    def factorial(self) -> int:
        """alpha! = product of the exponent factorials, exact."""
        out = 1
        for _, e in self.entries:
            out *= math.factorial(e)
        return out

    def support(self) -> tuple[int, ...]:
        return tuple(k for k, _ in self.entries)

    def is_zero(self) -> bool:
        return not self.entries

    def __getitem__(self, k: int) -> int:
        for kk, e in self.entries:
            if kk == k:
                return e
        return 0

    def __add__(self, other: "MultiIndex") -> "MultiIndex":
        merged = dict(self.entries)
        for k, e in other.entries:
            merged[k] = merged.get(k, 0) + e
        return MultiIndex.make(merged)

    def __sub__(self, other: "MultiIndex") -> "MultiIndex":
        merged = dict(self.entries)
        for k, e in other.entries:
            merged[k] = merged.get(k, 0) - e
            if merged[k] < 0:
                raise ValueError(f"{other} is not dominated by {self}")
        return MultiIndex.make(merged)

    def __le__(self, other: "MultiIndex") -> bool:
        """Componentwise domination (partial order)."""
        return all(e <= other[k] for k, e in self.entries)

    def binom(self, beta: "MultiIndex") -> int:
        """Product of the componentwise binomial coefficients."""
        out = 1
        for k in set(self.support()) | set(beta.support()):
            out *= math.comb(self[k], beta[k])
        return out

    def sub_indices(self) -> Iterator["MultiIndex"]:
        """All beta with 0 <= beta <= self, in a fixed lexicographic order."""
        coords = self.support()
        ranges = [range(self[k] + 1) for k in coords]
        for combo in itertools.product(*ranges):
            yield MultiIndex.make({k: c for k, c in zip(coords, combo)})

    def label(self) -> str:
        """Human-readable form such as '0', 'e2' or '2e1+e3'."""
        if not self.entries:
            return "0"
        parts = [f"e{k}" if e == 1 else f"{e}e{k}" for k, e in self.entries]
        return "+".join(parts)

    def sort_key(self) -> tuple:
        return (self.order(), self.entries)


@dataclass(frozen=True)
class Composition:
    """Ordered tuple of positive integers; `total` is the composed number."""

    parts: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.parts or any(p < 1 for p in self.parts):
            raise ValueError("composition parts must be positive integers")

    @property
    def total(self) -> int:
        return sum(self.parts)

    @property
    def length(self) -> int:
        return len(self.parts)


def compositions(n: int, r: int) -> list[Composition]:
    """All ordered r-tuples of positive integers summing to n, lexicographic.

    Returns the empty list when r < 1 or r > n; otherwise the count equals
    binom(n-1, r-1).

    >>> [c.parts for c in compositions(4, 2)]
    [(1, 3), (2, 2), (3, 1)]
    """
    if r < 1 or r > n:
        return []
    out: list[Composition] = []

    def rec(prefix: tuple[int, ...], remaining: int, slots: int) -> None:
        if slots == 1:
            out.append(Composition(prefix + (remaining,)))
            return
        for first in range(1, remaining - slots + 2):
            rec(prefix + (first,), remaining - first, slots - 1)

    rec((), n, r)
    return out


@dataclass(frozen=True)
class MultiIndexComposition:
    """Ordered tuple of nonzero multi-indices with a fixed multi-index total."""

    parts: tuple[MultiIndex, ...]

    def __post_init__(self) -> None:
        if not self.parts or any(p.is_zero() for p in self.parts):
            raise ValueError("parts must be nonzero multi-indices")

    def total(self) -> MultiIndex:
        out = MultiIndex()
        for p in self.parts:
            out = out + p
        return out


def multi_index_compositions(alpha: MultiIndex, r: int) -> list[MultiIndexComposition]:
    """All ordered r-tuples of nonzero multi-indices summing to alpha.

    Empty when r < 1 or r > |alpha|.  The enumeration order is fixed by the
    lexicographic order of `MultiIndex.sub_indices`.
    """
    if alpha.is_zero() or r < 1 or r > alpha.order():
        return []
    out: list[MultiIndexComposition] = []

    def rec(prefix: tuple[MultiIndex, ...], remaining: MultiIndex, slots: int) -> None:
        if slots == 1:
            if not remaining.is_zero():
                out.append(MultiIndexComposition(prefix + (remaining,)))
            return
        for beta in remaining.sub_indices():
            if beta.is_zero():
                continue
            rest = remaining - beta
            if rest.order() < slots - 1:
                continue
            rec(prefix + (beta,), rest, slots - 1)

    rec((), alpha, r)
    return out


@dataclass(frozen=True)
class SetPartition:
    """Disjoint nonempty blocks covering {1, ..., n}.

    Blocks are internally sorted and listed by their smallest element.
    """

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for block in self.blocks:
            if not block or tuple(sorted(block)) != block:
                raise ValueError("blocks must be nonempty and sorted")
            if seen & set(block):
                raise ValueError("blocks must be pairwise disjoint")
            seen |= set(block)
        if seen != set(range(1, len(seen) + 1)):
            raise ValueError("blocks must cover {1, ..., n}")

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def block_sizes(self) -> tuple[int, ...]:
        return tuple(len(b) for b in self.blocks)


def set_partitions(n: int, min_blocks: int = 1) -> Iterator[SetPartition]:
    """Yield every partition of {1, ..., n} with at least `min_blocks` blocks.

    Enumeration follows restricted-growth strings, so the order is
    deterministic; the total count for min_blocks=1 is the Bell number.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    labels = [0] * n

    def rec(i: int, mx: int) -> Iterator[SetPartition]:
        if i == n:
            n_blocks = mx + 1
            if n_blocks >= min_blocks:
                blocks: list[list[int]] = [[] for _ in range(n_blocks)]
                for pos, lab in enumerate(labels, start=1):
                    blocks[lab].append(pos)
                yield SetPartition(tuple(tuple(b) for b in blocks))
            return
        for v in range(mx + 2):
            labels[i] = v
            yield from rec(i + 1, max(mx, v))

    yield from rec(1, 0)


def schroeder_hipparchus_sequence(n: int) -> list[int]:
    """First n little Schroeder numbers 1, 1, 3, 11, 45, ..., exact.

    Uses the classical three-term recursion
    (m+1) k_{m+1} = (6m-3) k_m - (m-2) k_{m-1}.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seq = [1, 1]
    for m in range(2, n):
        num = (6 * m - 3) * seq[-1] - (m - 2) * seq[-2]
        q, rem = divmod(num, m + 1)
        if rem:
            raise ArithmeticError("three-term recursion produced a non-integer")
        seq.append(q)
    return seq[:n]


def schroeder_hipparchus(n: int) -> int:
    """The n-th little Schroeder number (1-based), exact integer."""
    return schroeder_hipparchus_sequence(n)[-1]


def schroeder_hipparchus_by_composition_sum(n: int) -> int:
    """Independent evaluation of the defining recursion.

    k_1 = 1 and, for m >= 2,
    k_m = sum over r = 2..m and compositions (i_1, ..., i_r) of m
          of the product k_{i_1} * ... * k_{i_r}.
    Exponential in n; intended for cross-checks at desk scale.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    kappa = [0, 1]
    for m in range(2, n + 1):
        total = 0
        for r in range(2, m + 1):
            for comp in compositions(m, r):
                prod = 1
                for i in comp.parts:
                    prod *= kappa[i]
                total += prod
        kappa.append(total)
    return kappa[n]


def factorial_inequality_check(comp: Composition) -> bool:
    """True iff r! * prod(i_j!) <= n! for the composition's own n and r."""
    lhs = math.factorial(comp.length)
    for i in comp.parts:
        lhs *= math.factorial(i)
    return lhs <= math.factorial(comp.total)


def composition_identity_check(alpha: MultiIndex, r: int) -> bool:
    """Exact check of the multi-index composition identity.

    alpha! * sum over ordered r-part compositions (beta_1, ..., beta_r) of
    alpha of prod_j |beta_j|!/beta_j!  must equal
    |alpha|! * binom(|alpha|-1, r-1).
    """
    if alpha.is_zero() or r < 1 or r > alpha.order():
        raise ValueError("need a nonzero alpha and 1 <= r <= |alpha|")
    lhs = 0
    for comb in multi_index_compositions(alpha, r):
        term = 1
        for beta in comb.parts:
            q, rem = divmod(math.factorial(beta.order()), beta.factorial())
            if rem:
                raise ArithmeticError("multinomial coefficient was not an integer")
            term *= q
        lhs += term
    lhs *= alpha.factorial()
    rhs = math.factorial(alpha.order()) * math.comb(alpha.order() - 1, r - 1)
    return lhs == rhs


def _exponent_tuples(n_coords: int, total: int) -> Iterator[tuple[int, ...]]:
    if n_coords == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _exponent_tuples(n_coords - 1, total - first):
            yield (first,) + rest


def multi_indices_up_to(n_coords: int, max_order: int) -> list[MultiIndex]:
    """All multi-indices with support in {1..n_coords} and order <= max_order.

    Sorted by total order, then lexicographically; includes the zero index.
    """
    if n_coords < 1 or max_order < 0:
        raise ValueError("need n_coords >= 1 and max_order >= 0")
    out: list[MultiIndex] = []
    for total in range(max_order + 1):
        block = [MultiIndex.make(t) for t in _exponent_tuples(n_coords, total)]
        block.sort(key=lambda a: a.entries)
        out.extend(block)
    return out


def kappa_asymptotic_log(n: int) -> float:
    """Natural log of the classical little-Schroeder asymptotic.

    (1/4) * sqrt((sqrt(18) - 4)/pi) * n**(-3/2) * (3 + sqrt(8))**n
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return (
        math.log(0.25)
        + 0.5 * math.log((math.sqrt(18.0) - 4.0) / math.pi)
        - 1.5 * math.log(n)
        + n * math.log(C_KAPPA)
    )
