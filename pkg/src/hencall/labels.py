"""Call-type labels and the multi-label indicator vector.

Eight call types are grouped into four semantic master classes; a master
indicator is set exactly when one of its member call types is set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SUBCLASS_NAMES = (
    "food_calls",
    "distress",
    "panic",
    "egg_laying",
    "fear",
    "alarm",
    "gakel_calls",
    "lonely_calls",
)

MASTER_NAMES = ("food_calls", "egg_laying", "fear", "lonely_calls")

# master index -> member subclass indices
MASTER_GROUPS = {
    0: (0, 1, 2),  # food_calls, distress, panic
    1: (3,),       # egg_laying
    2: (4, 5, 6),  # fear, alarm, gakel_calls
    3: (7,),       # lonely_calls
}

SUBCLASS_TO_MASTER = {s: m for m, members in MASTER_GROUPS.items() for s in members}

NUM_SUBCLASSES = 8
NUM_MASTERS = 4


class LabelError(ValueError):
    """Invalid subclass/master indicator combination."""


def masters_from_subclasses(subclass: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(
        1 if any(subclass[s] for s in MASTER_GROUPS[m]) else 0
        for m in range(NUM_MASTERS)
    )


@dataclass(frozen=True)
class LabelVector:
    """8 subclass indicators plus the 4 induced master-class indicators.

    ``master`` is derived from ``subclass`` when omitted; when given it must
    equal the OR of the member subclasses.
    """

    subclass: tuple[int, ...]
    master: tuple[int, ...] = field(default=())

    def __post_init__(self) -> None:
        sub = tuple(int(bool(v)) for v in self.subclass)
        if len(sub) != NUM_SUBCLASSES:
            raise LabelError(f"expected {NUM_SUBCLASSES} subclass indicators, got {len(sub)}")
        if not any(sub):
            raise LabelError("at least one subclass indicator must be set")
        induced = masters_from_subclasses(sub)
        if self.master:
            given = tuple(int(bool(v)) for v in self.master)
            if given != induced:
                raise LabelError(f"master indicators {given} do not match subclasses (expected {induced})")
        object.__setattr__(self, "subclass", sub)
        object.__setattr__(self, "master", induced)

    @classmethod
    def from_names(cls, names: list[str] | tuple[str, ...]) -> "LabelVector":
        sub = [0] * NUM_SUBCLASSES
        for name in names:
            if name not in SUBCLASS_NAMES:
                raise LabelError(f"unknown call type {name!r}")
            sub[SUBCLASS_NAMES.index(name)] = 1
        return cls(subclass=tuple(sub))

    @classmethod
    def from_indices(cls, indices) -> "LabelVector":
        sub = [0] * NUM_SUBCLASSES
        for i in indices:
            sub[int(i)] = 1
        return cls(subclass=tuple(sub))

    @classmethod
    def from_bitmask(cls, mask: int) -> "LabelVector":
        return cls(subclass=tuple((mask >> i) & 1 for i in range(NUM_SUBCLASSES)))

    def to_bitmask(self) -> int:
        return sum(bit << i for i, bit in enumerate(self.subclass))

    def names(self) -> tuple[str, ...]:
        return tuple(SUBCLASS_NAMES[i] for i, bit in enumerate(self.subclass) if bit)

    def subclass_set(self) -> frozenset[int]:
        return frozenset(i for i, bit in enumerate(self.subclass) if bit)

    def primary(self) -> int:
        """Lowest-index set subclass; used for stratification."""
        return min(self.subclass_set())
