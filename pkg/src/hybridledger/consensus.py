"""Total-order sequencer used as a black box by validators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .committee import Committee, EpochID
from .crypto import Attestor
from .encoding import canonical
from .messages import TxCert, verify_tx_cert


@canonical
@dataclass(frozen=True)
class Commit:
    epoch: EpochID
    seq: int
    certs: tuple = ()
    system: tuple = ()  # checkpoint signatures and reconfiguration calls


class EpochClosed(Exception):
    pass


class RejectedSubmission(ValueError):
    pass


@dataclass
class Sequencer:
    """A single logical log per epoch.

    Submissions are batched into a commit whenever :meth:`cut` is called
    (the simulator calls it every commit interval). Certificates are
    deduplicated per epoch; system messages are kept as submitted.
    """

    attestor: Attestor
    committees: dict = field(default_factory=dict)   # epoch -> Committee
    epoch: EpochID = 0
    logs: dict = field(default_factory=dict)         # epoch -> list[Commit]
    closed: dict = field(default_factory=dict)       # epoch -> last effective seq
    _pending: dict = field(default_factory=dict)     # epoch -> list of items
    _seen: dict = field(default_factory=dict)        # epoch -> set of cert digests

    def add_committee(self, committee: Committee) -> None:
        self.committees.setdefault(committee.epoch, committee)

    def submit(self, item: Any, epoch: Optional[EpochID] = None) -> None:
        if isinstance(item, TxCert):
            epoch = item.epoch
            committee = self.committees.get(epoch)
            if committee is not None and not verify_tx_cert(item, committee, self.attestor):
                raise RejectedSubmission("certificate lacks a valid quorum")
        if epoch is None:
            raise RejectedSubmission("epoch unknown for submission")
        if epoch < self.epoch or epoch in self.closed:
            raise EpochClosed(f"epoch {epoch} is closed")
        if isinstance(item, TxCert):
            seen = self._seen.setdefault(epoch, set())
            if item.digest in seen:
                return
            seen.add(item.digest)
        self._pending.setdefault(epoch, []).append(item)

    def cut(self) -> Commit:
        items = self._pending.pop(self.epoch, [])
        log = self.logs.setdefault(self.epoch, [])
        certs = tuple(i for i in items if isinstance(i, TxCert))
        system = tuple(i for i in items if not isinstance(i, TxCert))
        c = Commit(self.epoch, len(log), certs, system)
        log.append(c)
        return c

    def close_epoch(self, epoch: EpochID, last_seq: int, next_committee: Committee) -> None:
        """Called once the epoch ended at commit ``last_seq``; idempotent."""
        if epoch in self.closed:
            return
        self.closed[epoch] = last_seq
        self._pending.pop(epoch, None)
        self.add_committee(next_committee)
        if self.epoch == epoch:
            self.epoch = epoch + 1
            # Pre-submitted items for the new epoch were held; re-check certs now.
            held = self._pending.pop(self.epoch, [])
            self._seen.pop(self.epoch, None)
            for item in held:
                try:
                    self.submit(item, self.epoch)
                except (RejectedSubmission, EpochClosed):
                    pass

    def commits(self, epoch: EpochID, from_seq: int = 0) -> list[Commit]:
        log = self.logs.get(epoch, [])
        last = self.closed.get(epoch)
        upto = len(log) if last is None else min(len(log), last + 1)
        return log[from_seq:upto]


def submit(sequencer: Sequencer, item, epoch=None) -> None:
    sequencer.submit(item, epoch)


def commit_stream(sequencer: Sequencer, epoch: EpochID, from_seq: int = 0):
    return iter(sequencer.commits(epoch, from_seq))
