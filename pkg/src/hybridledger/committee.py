from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .encoding import canonical

ValidatorID = str
EpochID = int


@canonical
@dataclass(frozen=True)
class Committee:
    epoch: EpochID
    members: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(s < 0 for s in self.members.values()):
            raise ValueError("stake must be non-negative")

    @classmethod
    def equal_stake(cls, n: int, epoch: EpochID = 0, stake: int = 1) -> "Committee":
        return cls(epoch, {f"v{i}": stake for i in range(n)})

    @property
    def total_stake(self) -> int:
        return sum(self.members.values())

    def stake(self, validator: ValidatorID) -> int:
        return self.members.get(validator, 0)

    def stake_of(self, validators: Iterable[ValidatorID]) -> int:
        return sum(self.members.get(v, 0) for v in set(validators))

    def quorum_threshold(self) -> int:
        return quorum_threshold(self)

    def validity_threshold(self) -> int:
        return validity_threshold(self)

    def has_quorum(self, validators: Iterable[ValidatorID]) -> bool:
        return self.stake_of(validators) >= quorum_threshold(self)

    def __contains__(self, validator: ValidatorID) -> bool:
        return validator in self.members

    def ids(self) -> list[ValidatorID]:
        return sorted(self.members)


def quorum_threshold(c: Committee) -> int:
    total = c.total_stake
    if total <= 0:
        raise ValueError("committee has no stake")
    return 2 * total // 3 + 1


def validity_threshold(c: Committee) -> int:
    total = c.total_stake
    if total <= 0:
        raise ValueError("committee has no stake")
    return total // 3 + 1


def committee_from_mapping(epoch: EpochID, stakes: Mapping[str, int]) -> Committee:
    return Committee(epoch, dict(stakes))
