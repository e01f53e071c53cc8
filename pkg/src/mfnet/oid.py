"""Object identifiers: dotted sequences of non-negative integer arcs.

Ordering is lexicographic over the arcs, so a prefix sorts before any of
its extensions.  That is the order get-next walks rely on.
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass

from mfnet.errors import OidParseError

_ARC_RE = re.compile(r"\d+")


@functools.total_ordering
@dataclass(frozen=True)
class Oid:
    arcs: tuple[int, ...]

    def __init__(self, arcs):
        arcs = tuple(int(a) for a in arcs)
        if not arcs:
            raise ValueError("OID must have at least one arc")
        if any(a < 0 for a in arcs):
            raise ValueError("OID arcs must be non-negative")
        object.__setattr__(self, "arcs", arcs)

    @classmethod
    def parse(cls, text: str) -> "Oid":
        """Parse dotted-decimal text; errors name the offending position."""
        if not text:
            raise OidParseError(text, 0)
        pos = 0
        arcs = []
        while True:
            m = _ARC_RE.match(text, pos)
            if not m:
                raise OidParseError(text, pos)
            arcs.append(int(m.group()))
            pos = m.end()
            if pos == len(text):
                break
            if text[pos] != ".":
                raise OidParseError(text, pos)
            pos += 1
        return cls(arcs)

    def __str__(self) -> str:
        return ".".join(str(a) for a in self.arcs)

    def __repr__(self) -> str:
        return f"Oid({str(self)!r})"

    def __lt__(self, other: "Oid") -> bool:
        return self.arcs < other.arcs

    def __len__(self) -> int:
        return len(self.arcs)

    def child(self, *extra: int) -> "Oid":
        return Oid(self.arcs + tuple(extra))

    def parent(self) -> "Oid":
        if len(self.arcs) == 1:
            raise ValueError("root arc has no parent")
        return Oid(self.arcs[:-1])

    def startswith(self, prefix: "Oid") -> bool:
        return self.arcs[: len(prefix.arcs)] == prefix.arcs


def compare_oid(a: Oid, b: Oid) -> int:
    """Three-way comparison: -1, 0 or 1."""
    if a.arcs == b.arcs:
        return 0
    return -1 if a.arcs < b.arcs else 1
