"""
Computing tiers and their data-flow order.
"""
from enum import Enum
from typing import Iterable


class Tier(str, Enum):
    """A computing tier; ``DEVICE`` precedes ``EDGE`` precedes ``CLOUD``."""

    DEVICE = "d"
    EDGE = "e"
    CLOUD = "c"

    @property
    def rank(self) -> int:
        return _RANK[self]

    @classmethod
    def ordered(cls) -> tuple["Tier", "Tier", "Tier"]:
        return (cls.DEVICE, cls.EDGE, cls.CLOUD)

    @classmethod
    def from_rank(cls, rank: int) -> "Tier":
        return cls.ordered()[rank]

    @classmethod
    def parse(cls, value: "str | Tier") -> "Tier":
        if isinstance(value, Tier):
            return value
        key = str(value).strip().lower()
        for tier in cls:
            if key in (tier.value, tier.name.lower()):
                return tier
        raise ValueError(f"Unknown tier: {value!r}")

    def precedes(self, other: "Tier") -> bool:
        """True when ``self`` ≻ ``other`` (strictly more device-ward)."""
        return self.rank < other.rank

    @property
    def label(self) -> str:
        return self.name.lower()


_RANK = {Tier.DEVICE: 0, Tier.EDGE: 1, Tier.CLOUD: 2}


def sort_tiers(tiers: Iterable[Tier]) -> list[Tier]:
    return sorted(tiers, key=lambda t: t.rank)
