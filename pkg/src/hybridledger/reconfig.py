"""Epoch-change contract and the per-validator epoch transition."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .committee import Committee, ValidatorID
from .encoding import canonical


class Phase(enum.Enum):
    REGISTER = "Register"
    READY = "Ready"
    END_OF_EPOCH = "End-of-Epoch"
    HANDOVER = "Handover"


# Contract calls travel through consensus as system messages.

@canonical
@dataclass(frozen=True)
class RegisterVote:
    sender: ValidatorID
    stake: int


@canonical
@dataclass(frozen=True)
class ReadyVote:
    sender: ValidatorID


@canonical
@dataclass(frozen=True)
class EndOfEpochVote:
    sender: ValidatorID


@canonical
@dataclass(frozen=True)
class HandoverCall:
    sender: ValidatorID


@dataclass
class ReconfigContract:
    S: int
    T: int
    old: dict                                  # validator -> stake
    new: dict = field(default_factory=dict)
    phase: Phase = Phase.REGISTER
    epoch_edge: int = 0
    voters: set = field(default_factory=set)
    history: list = field(default_factory=list)  # phase transitions, for tests

    @classmethod
    def for_committee(cls, committee: Committee, S: int = 8, T: int = 1) -> "ReconfigContract":
        return cls(S, T, dict(committee.members))

    @property
    def total_old_stake(self) -> int:
        return sum(self.old.values())

    @property
    def total_new_stake(self) -> int:
        return sum(self.new.values())

    @property
    def stake(self) -> int:
        """Stake accumulated towards the current phase transition."""
        pool = self.new if self.phase is Phase.READY else self.old
        return sum(pool.get(v, 0) for v in self.voters)

    def _goto(self, phase: Phase) -> None:
        self.phase = phase
        self.voters = set()
        self.history.append(phase)

    def register(self, sender: ValidatorID, stake: int) -> None:
        if self.phase is not Phase.REGISTER:
            return
        if stake >= self.T:
            self.new[sender] = stake

    def ready(self, sender: ValidatorID, latest_seq: int) -> bool:
        """Returns True when this call pauses transaction locking."""
        if self.phase is Phase.REGISTER and latest_seq >= self.S:
            self._goto(Phase.READY)
        if self.phase is not Phase.READY:
            return False
        if sender in self.new:
            self.voters.add(sender)
        if self.new and self.stake >= 2 * self.total_new_stake // 3 + 1:
            self._goto(Phase.END_OF_EPOCH)
            return True
        return False

    def end_of_epoch(self, sender: ValidatorID, latest_seq: int) -> bool:
        """Returns True when the epoch edge gets fixed."""
        if self.phase is not Phase.END_OF_EPOCH:
            return False
        if sender in self.old:
            self.voters.add(sender)
        if self.stake >= 2 * self.total_old_stake // 3 + 1:
            self._goto(Phase.HANDOVER)
            self.epoch_edge = latest_seq
            return True
        return False

    def handover(self, latest_seq: int):
        """Returns the next committee's stakes when the epoch ends, else None."""
        if self.phase is not Phase.HANDOVER or latest_seq < self.epoch_edge + 1:
            return None
        nxt = dict(self.new)
        self.old = nxt
        self.new = {}
        self.epoch_edge = 0
        self._goto(Phase.REGISTER)
        return nxt


# Module-level forms mirroring the contract functions.

def register(contract: ReconfigContract, sender, stake) -> None:
    contract.register(sender, stake)


def ready(contract: ReconfigContract, sender, latest_checkpoint_seq) -> bool:
    return contract.ready(sender, latest_checkpoint_seq)


def end_of_epoch(contract: ReconfigContract, sender, latest_checkpoint_seq) -> bool:
    return contract.end_of_epoch(sender, latest_checkpoint_seq)


def handover(contract: ReconfigContract, latest_checkpoint_seq):
    return contract.handover(latest_checkpoint_seq)


def epoch_transition(validator, committee: Committee) -> None:
    """Move ``validator`` into the epoch of ``committee``.

    Executions that never reached a checkpoint are undone newest first,
    locks are dropped and rebuilt from the surviving state, and tombstones
    are forgotten.
    """
    from .objects import ObjKey, SharedMutable, TOMBSTONE, is_owned

    st = validator.state
    checkpointed = validator.builder.index
    rolled_back = []
    for d in reversed(st.exec_order):
        if d in checkpointed:
            continue
        rec = st.undo.get(d)
        if rec is None:
            continue
        for key in rec.written_keys:
            st.objdb.pop(key, None)
            st._index_drop(key)
        for oid, v in rec.latest_before.items():
            if v is None:
                st.latest.pop(oid, None)
            else:
                st.latest[oid] = v
        for oid, v in rec.tombstone_before.items():
            if v is None:
                st.tombstones.pop(oid, None)
            else:
                st.tombstones[oid] = v
        st.ct.pop(d, None)
        rolled_back.append(d)

    st.owned_lock = {}
    st.shared_lock = {}
    st.next_shared_lock = {}
    for oid in list(st.tombstones):
        if st.latest.get(oid) == TOMBSTONE:
            del st.latest[oid]
    st.tombstones = {}
    for oid, v in st.latest.items():
        obj = st.objdb[ObjKey(oid, v)]
        if is_owned(obj.owner):
            st.owned_lock[obj.key] = None
        elif isinstance(obj.owner, SharedMutable):
            st.next_shared_lock[oid] = v
    st.undo = {}
    st.exec_order = []
    st.pending_checkpoint = set()
    st.paused = False
    st.epoch = committee.epoch
    st.committee = committee
    validator.builder.start_epoch(committee.epoch)
    validator._new_epoch(committee)
    validator._emit("rollback", epoch=committee.epoch - 1, txs=rolled_back)
