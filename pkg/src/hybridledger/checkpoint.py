"""Per-commit checkpoints: dedup, causal completion, canonical order, hash chain."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .committee import Committee, EpochID, ValidatorID
from .crypto import Attestor
from .encoding import canonical, digest_of, encode
from .messages import Effects
from .objects import GENESIS_DIGEST, TxDigest

ZERO_DIGEST = bytes(32)


@canonical
@dataclass(frozen=True)
class Checkpoint:
    epoch: EpochID
    seq: int
    prev_digest: bytes
    contents: tuple  # ((tx digest, effects digest), ...)

    @property
    def digest(self) -> bytes:
        d = self.__dict__.get("_digest")
        if d is None:
            d = digest_of(("Checkpoint", self.epoch, self.seq, self.prev_digest, self.contents))
            object.__setattr__(self, "_digest", d)
        return d

    def tx_digests(self) -> list[TxDigest]:
        return [t for t, _ in self.contents]


@dataclass(frozen=True)
class Deferred:
    """Nothing in the commit could be made causally complete yet."""
    waiting: tuple


@canonical
@dataclass(frozen=True)
class CheckpointSignature:
    validator: ValidatorID
    epoch: EpochID
    seq: int
    digest: bytes
    sig: bytes

    @classmethod
    def create(cls, cp: Checkpoint, validator: ValidatorID, attestor: Attestor):
        return cls(validator, cp.epoch, cp.seq, cp.digest,
                   attestor.sign(validator, _cp_message(cp.epoch, cp.seq, cp.digest)))

    def verify(self, attestor: Attestor) -> bool:
        return attestor.verify(self.validator, _cp_message(self.epoch, self.seq, self.digest),
                               self.sig)


def _cp_message(epoch, seq, d) -> bytes:
    return encode(("checkpoint", epoch, seq, d))


@dataclass(frozen=True)
class CheckpointCert:
    epoch: EpochID
    seq: int
    digest: bytes
    signers: frozenset


class CheckpointDivergence(AssertionError):
    """A quorum certified a digest that differs from the local checkpoint."""


def canonical_order(includable: Iterable[TxDigest], deps: dict[TxDigest, Iterable[TxDigest]]):
    """Topological order over ``deps`` restricted to ``includable``; ties by digest bytes."""
    nodes = set(includable)
    indeg = {n: 0 for n in nodes}
    children: dict[TxDigest, list] = {n: [] for n in nodes}
    for n in nodes:
        for d in set(deps.get(n, ())):
            if d in nodes and d != n:
                indeg[n] += 1
                children[d].append(n)
    ready = [n for n in nodes if indeg[n] == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        n = heapq.heappop(ready)
        out.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(ready, c)
    if len(out) != len(nodes):
        raise ValueError("dependency cycle among checkpoint candidates")
    return out


@dataclass
class CheckpointBuilder:
    """Single-writer checkpoint state for one validator.

    ``index`` maps every checkpointed digest (all epochs) to (epoch, seq).
    """

    epoch: EpochID = 0
    next_seq: int = 0
    prev_digest: bytes = ZERO_DIGEST
    index: dict = field(default_factory=dict)
    deferred: list = field(default_factory=list)
    seen: set = field(default_factory=set)  # digests that already appeared in a commit
    chain: list = field(default_factory=list)

    def build(self, commit_digests: Iterable[TxDigest],
              effects_of: Callable[[TxDigest], Optional[Effects]]):
        candidates = list(self.deferred)
        for d in commit_digests:
            if d in self.seen or d in self.index:
                continue  # first occurrence is the canonical one
            self.seen.add(d)
            candidates.append(d)
        deps: dict[TxDigest, tuple] = {}
        includable: set[TxDigest] = set()
        changed = True
        while changed:
            changed = False
            for c in candidates:
                if c in includable:
                    continue
                eff = effects_of(c)
                if eff is None:
                    continue
                deps[c] = eff.dependencies
                if all(d == GENESIS_DIGEST or d == c or d in self.index or d in includable
                       for d in eff.dependencies):
                    includable.add(c)
                    changed = True
        self.deferred = [c for c in candidates if c not in includable]
        if candidates and not includable:
            return Deferred(tuple(self.deferred))
        order = canonical_order(includable, deps)
        contents = tuple((d, effects_of(d).digest()) for d in order)
        cp = Checkpoint(self.epoch, self.next_seq, self.prev_digest, contents)
        for d in order:
            self.index[d] = (self.epoch, self.next_seq)
        self.next_seq += 1
        self.prev_digest = cp.digest
        self.chain.append(cp)
        return cp

    @property
    def latest_seq(self) -> int:
        """Epoch-local sequence of the newest checkpoint, or -1."""
        return self.next_seq - 1

    def start_epoch(self, epoch: EpochID) -> None:
        self.epoch = epoch
        self.next_seq = 0
        self.deferred = []
        self.seen = set()


def build_checkpoint(commit_digests, builder: CheckpointBuilder, effects_of):
    return builder.build(commit_digests, effects_of)


@dataclass
class CheckpointCertifier:
    """Collects sequenced checkpoint signatures; first quorum is canonical."""

    committee: Committee
    local: dict = field(default_factory=dict)      # seq -> digest
    votes: dict = field(default_factory=dict)      # (seq, digest) -> set of validators
    certs: dict = field(default_factory=dict)      # seq -> CheckpointCert

    def add_local(self, cp: Checkpoint) -> None:
        self.local[cp.seq] = cp.digest
        for (seq, d), voters in list(self.votes.items()):
            if seq == cp.seq:
                self._maybe_certify(seq, d, voters)

    def add_signature(self, s: CheckpointSignature, attestor: Attestor) -> Optional[CheckpointCert]:
        if s.epoch != self.committee.epoch or s.validator not in self.committee:
            return None
        if s.seq in self.certs or not s.verify(attestor):
            return None
        voters = self.votes.setdefault((s.seq, s.digest), set())
        voters.add(s.validator)
        return self._maybe_certify(s.seq, s.digest, voters)

    def _maybe_certify(self, seq, d, voters) -> Optional[CheckpointCert]:
        if seq in self.certs or not self.committee.has_quorum(voters):
            return None
        mine = self.local.get(seq)
        if mine is not None and mine != d:
            raise CheckpointDivergence(f"quorum certified checkpoint {seq} differs locally")
        if mine is None:
            return None
        cert = CheckpointCert(self.committee.epoch, seq, d, frozenset(voters))
        self.certs[seq] = cert
        return cert


def certify_checkpoint(local: Checkpoint, signatures: Iterable[CheckpointSignature],
                       committee: Committee, attestor: Attestor) -> Optional[CheckpointCert]:
    c = CheckpointCertifier(committee)
    c.add_local(local)
    out = None
    for s in signatures:
        if s.seq != local.seq:
            continue
        got = c.add_signature(s, attestor)
        out = out or got
    return out


def verify_chain(chain: list[Checkpoint], genesis_prev: bytes = ZERO_DIGEST) -> bool:
    prev = genesis_prev
    for cp in chain:
        if cp.prev_digest != prev:
            return False
        prev = cp.digest
    return True
