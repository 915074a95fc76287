"""Addresses on the b-ary tree and the ultrametric on its boundary.

A vertex is a finite digit sequence over ``{0, ..., b-1}``; the empty
sequence is the root.  Within a level, vertices are ordered
lexicographically, and the position of a vertex in that order (its
*index*) is what the array-based code in :mod:`cascata.cascade` uses.
The children of the vertex with index ``k`` at level ``n`` are the indices
``k*b + j`` at level ``n + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

DEFAULT_NODE_CAP = 2**24


class CapExceeded(ValueError):
    """A full-level enumeration would exceed the configured node budget."""


def check_branching(b: int) -> int:
    if int(b) != b or b < 2:
        raise ValueError(f"branching number must be an integer >= 2, got {b!r}")
    return int(b)


def check_cap(b: int, depth: int, cap: int = DEFAULT_NODE_CAP) -> None:
    if depth < 0:
        raise ValueError(f"depth must be nonnegative, got {depth}")
    if b**depth > cap:
        raise CapExceeded(f"b^n = {b}^{depth} = {b**depth} exceeds node cap {cap}")


@dataclass(frozen=True, order=True)
class TreeAddress:
    """A vertex of the b-ary tree, stored as ``(b, digits)``."""

    b: int
    digits: tuple[int, ...] = ()

    def __post_init__(self):
        check_branching(self.b)
        digits = tuple(int(d) for d in self.digits)
        for d in digits:
            if not 0 <= d < self.b:
                raise ValueError(f"digit {d} out of range for b={self.b}")
        object.__setattr__(self, "digits", digits)

    @classmethod
    def root(cls, b: int) -> "TreeAddress":
        return cls(b, ())

    @classmethod
    def from_index(cls, b: int, level: int, index: int) -> "TreeAddress":
        if not 0 <= index < b**level:
            raise ValueError(f"index {index} out of range for level {level}")
        digits = []
        for _ in range(level):
            index, d = divmod(index, b)
            digits.append(d)
        return cls(b, tuple(reversed(digits)))

    @classmethod
    def parse(cls, text: str, b: int) -> "TreeAddress":
        """Inverse of ``str()``: ``"@"`` is the root, otherwise ``"d1.d2..."``."""
        text = text.strip()
        if text == "@":
            return cls.root(b)
        return cls(b, tuple(int(part) for part in text.split(".")))

    def __len__(self) -> int:
        return len(self.digits)

    @property
    def level(self) -> int:
        return len(self.digits)

    @property
    def index(self) -> int:
        """Lexicographic position of this vertex among the ``b**level`` at its level."""
        k = 0
        for d in self.digits:
            k = k * self.b + d
        return k

    def child(self, j: int) -> "TreeAddress":
        if not 0 <= j < self.b:
            raise ValueError(f"digit {j} out of range for b={self.b}")
        return TreeAddress(self.b, self.digits + (j,))

    def prefix(self, n: int) -> "TreeAddress":
        """The truncation ``t|n``."""
        if not 0 <= n <= len(self.digits):
            raise ValueError(f"prefix length {n} outside [0, {len(self.digits)}]")
        return TreeAddress(self.b, self.digits[:n])

    def parent(self) -> "TreeAddress":
        if not self.digits:
            raise ValueError("the root has no parent")
        return self.prefix(len(self.digits) - 1)

    def is_prefix_of(self, other: "TreeAddress") -> bool:
        return self.b == other.b and other.digits[: len(self.digits)] == self.digits

    def canonical_bytes(self) -> bytes:
        width = 1 if self.b <= 256 else 4
        head = self.b.to_bytes(4, "little") + len(self.digits).to_bytes(4, "little")
        return head + b"".join(d.to_bytes(width, "little") for d in self.digits)

    def __str__(self) -> str:
        return "@" if not self.digits else ".".join(str(d) for d in self.digits)


def child(gamma: TreeAddress, j: int) -> TreeAddress:
    return gamma.child(j)


def first_mismatch(s: Sequence[int], t: Sequence[int]) -> int | None:
    """1-based position of the first differing digit, ``None`` if none differ."""
    for n, (x, y) in enumerate(zip(s, t), start=1):
        if x != y:
            return n
    return None


def ultrametric_distance(s: Sequence[int], t: Sequence[int], b: int) -> float:
    """``b ** -a(s, t)`` where ``a`` is the first index at which the digits differ.

    Sequences are compared over their common length; agreeing over that
    horizon gives distance 0.
    """
    check_branching(b)
    if isinstance(s, TreeAddress):
        s = s.digits
    if isinstance(t, TreeAddress):
        t = t.digits
    a = first_mismatch(s, t)
    return 0.0 if a is None else float(b) ** -a


def enumerate_level(n: int, b: int, cap: int = DEFAULT_NODE_CAP) -> list[TreeAddress]:
    check_branching(b)
    check_cap(b, n, cap)
    return [TreeAddress.from_index(b, n, k) for k in range(b**n)]


def iter_prefixes(t: TreeAddress) -> Iterator[TreeAddress]:
    for n in range(len(t) + 1):
        yield t.prefix(n)


def ancestor_indices(index: np.ndarray, level: int, b: int) -> np.ndarray:
    """Indices of the ancestors at levels ``0..level`` of level-``level`` vertices.

    Returns an integer array of shape ``index.shape + (level + 1,)``.
    """
    index = np.asarray(index, dtype=np.int64)
    powers = b ** np.arange(level, -1, -1, dtype=np.int64)
    return index[..., None] // powers


def digits_to_indices(digits: np.ndarray, b: int) -> np.ndarray:
    """Per-level indices of a path given as a digit array of shape ``(..., n)``.

    Column ``m`` of the result is the index of ``t|m`` (column 0 is the root).
    """
    digits = np.asarray(digits, dtype=np.int64)
    out = np.zeros(digits.shape[:-1] + (digits.shape[-1] + 1,), dtype=np.int64)
    for m in range(digits.shape[-1]):
        out[..., m + 1] = out[..., m] * b + digits[..., m]
    return out
