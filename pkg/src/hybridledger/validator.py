"""Validator state machine: locking, certificate execution, commit scheduling."""

from __future__ import annotations

import threading
from contextlib import ExitStack, contextmanager
from dataclasses import dataclass
from typing import Any, Iterable, Optional

from .checkpoint import Checkpoint, CheckpointBuilder, CheckpointCertifier, CheckpointSignature
from .committee import Committee
from .consensus import Commit
from .crypto import DEFAULT_ATTESTOR, Attestor
from .execution import DEFAULT_GAS, GasSchedule, exec_tx, readonly_shared_ids, tx_valid
from .messages import EffSign, Tx, TxCert, TxSign, tx_digest, verify_tx_cert
from .objects import TOMBSTONE, Obj, ObjKey, SharedMutable, is_owned
from .reconfig import (
    EndOfEpochVote, HandoverCall, Phase, ReadyVote, ReconfigContract, RegisterVote,
    epoch_transition,
)
from .store import UndoRecord, ValidatorState


class ProtocolError(Exception):
    kind = "error"


class MissingObjects(ProtocolError):
    kind = "missing"

    def __init__(self, keys):
        self.keys = list(keys)
        super().__init__(f"missing {len(self.keys)} object(s)")


class StaleObject(ProtocolError):
    """An owned input version was already consumed."""
    kind = "stale"

    def __init__(self, keys):
        self.keys = list(keys)
        super().__init__("input object version no longer live")


class InitialVersionMismatch(ProtocolError):
    kind = "initial-version"


class InvalidTransaction(ProtocolError):
    kind = "invalid"


class InvalidCertificate(ProtocolError):
    kind = "invalid-cert"


class LockConflict(ProtocolError):
    kind = "conflict"

    def __init__(self, key: ObjKey, holder: bytes):
        self.key = key
        self.holder = holder
        super().__init__("object version locked by another transaction")


class ValidatorPaused(ProtocolError):
    kind = "paused"


class WrongEpoch(ProtocolError):
    kind = "epoch"

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"validator is in epoch {expected}, message for {got}")


class NotScheduled(ProtocolError):
    kind = "not-scheduled"


@dataclass(frozen=True)
class Forwarded:
    digest: bytes


class KeyGuards:
    """Per-ObjKey mutexes, always taken in sorted key order."""

    def __init__(self):
        self._locks: dict = {}
        self._meta = threading.Lock()

    @contextmanager
    def hold(self, keys: Iterable[ObjKey]):
        ordered = sorted(set(keys), key=lambda k: (k.id, k.version))
        with self._meta:
            locks = [self._locks.setdefault(k, threading.Lock()) for k in ordered]
        with ExitStack() as stack:
            for lk in locks:
                stack.enter_context(lk)
            yield


HONEST, EQUIVOCATE, SILENT, GARBAGE = "honest", "equivocate", "silent", "garbage"


class Validator:
    def __init__(self, name: str, committee: Committee, genesis: Iterable[Obj] = (), *,
                 attestor: Attestor = DEFAULT_ATTESTOR, gas: GasSchedule = DEFAULT_GAS,
                 S: int = 8, T: int = 1, behavior: str = HONEST):
        self.name = name
        self.attestor = attestor
        self.gas = gas
        self.behavior = behavior
        self.S, self.T = S, T
        self.state = ValidatorState(committee.epoch, committee)
        self.state.seed_genesis(genesis)
        self.guards = KeyGuards()
        self.builder = CheckpointBuilder(epoch=committee.epoch)
        self.outbox: list[tuple] = []
        self.events: list[tuple] = []
        self._new_epoch(committee)

    # -- helpers ---------------------------------------------------------

    @property
    def epoch(self) -> int:
        return self.state.epoch

    @property
    def committee(self) -> Committee:
        return self.state.committee

    def _new_epoch(self, committee: Committee) -> None:
        self.certifier = CheckpointCertifier(committee)
        self.contract = ReconfigContract.for_committee(committee, self.S, self.T)
        self.last_seq = -1
        self.sequenced: set = set()
        self.queue: list[TxCert] = []
        self.accepting_certs = True
        self.sent_register = False
        self.sent_ready = False
        self.sent_eoe = False

    def _submit(self, item) -> None:
        self.outbox.append(("consensus", item, self.state.epoch))

    def _emit(self, kind: str, **data) -> None:
        data.setdefault("epoch", self.epoch)
        self.events.append((kind, data))

    # -- transaction locking ----------------------------------------------

    def process_tx(self, tx: Tx) -> TxSign:
        st = self.state
        if tx.epoch != st.epoch:
            raise WrongEpoch(st.epoch, tx.epoch)
        if st.paused:
            raise ValidatorPaused("transaction locking paused for epoch change")
        if not self.attestor.verify(tx.sender, tx.signing_bytes(), tx.user_sig):
            raise InvalidTransaction("bad user signature")
        shape = tx.shape_error()
        if shape:
            raise InvalidTransaction(shape)

        # load inputs
        owned, missing, stale = [], [], []
        for ref in tx.owned_inputs:
            key = ref.key
            if key not in st.owned_lock:
                (stale if key in st.objdb else missing).append(key)
            else:
                owned.append(st.objdb[key])
        readonly = []
        for oid in tx.readonly_inputs:
            obj = st.live(oid)
            if obj is None:
                missing.append(ObjKey(oid, st.latest.get(oid, 0)))
            else:
                readonly.append(obj)
        shared = []
        for oid, iv in tx.shared_inputs:
            obj = st.live(oid)
            if obj is None:
                if st.is_deleted(oid):
                    raise InvalidTransaction("shared input was deleted")
                missing.append(ObjKey(oid, iv))
                continue
            if obj.initial_version != iv:
                raise InitialVersionMismatch("declared initial version does not match")
            shared.append(obj)
        if missing:
            raise MissingObjects(missing)
        if stale:
            raise StaleObject(stale)

        # static validity
        ok, why = tx_valid(tx, owned, self.gas, lookup=st.live, readonly_objs=readonly,
                           shared_objs=shared)
        if not ok:
            raise InvalidTransaction(why)

        # lock all owned inputs or none
        sign = TxSign.create(tx, self.name, self.attestor)
        if self.behavior == GARBAGE:
            sign = TxSign(sign.tx_digest, self.name, sign.epoch, b"\x00" * len(sign.sig))
        d = tx_digest(tx)
        keys = tx.owned_keys()
        with self.guards.hold(keys):
            if self.behavior != EQUIVOCATE:
                for key in keys:
                    cur = st.owned_lock.get(key)
                    if cur is not None and cur.tx_digest != d:
                        raise LockConflict(key, cur.tx_digest)
                    if cur is not None:
                        sign = cur
            with st.batch() as b:
                for key in keys:
                    if st.owned_lock.get(key) is None:
                        b.put("owned_lock", key, sign)
        self._emit("lock", tx=d, keys=keys)
        return sign

    # -- certificates ----------------------------------------------------

    def process_cert(self, cert: TxCert, from_client: bool = True):
        st = self.state
        if cert.epoch != st.epoch:
            raise WrongEpoch(st.epoch, cert.epoch)
        d = cert.digest
        done = st.ct.get(d)
        if done is not None:
            return done[1]
        if not verify_tx_cert(cert, st.committee, self.attestor):
            raise InvalidCertificate("certificate lacks a valid quorum")
        if from_client and not self.accepting_certs:
            raise ValidatorPaused("not accepting certificates at end of epoch")
        tx = cert.tx
        owned = self._load_owned(tx)
        readonly = self._load_readonly(tx)
        for oid, _ in tx.shared_inputs:
            if oid not in st.latest:
                raise MissingObjects([ObjKey(oid, 0)])
        if tx.shared_inputs:
            if not self.shared_locks_exist(cert):
                if d not in self.sequenced:
                    self._submit(cert)
                st.pending_checkpoint.add(d)
                return Forwarded(d)
            ready, shared, deleted = self.check_shared_locks(cert)
            if not ready:
                raise NotScheduled("waiting for earlier holders of the shared lock")
        else:
            shared, deleted = [], {}
        effsign = self._execute(cert, owned, shared, readonly, deleted)
        if not tx.shared_inputs and d not in self.sequenced:
            self._submit(cert)
        return effsign

    def _load_owned(self, tx: Tx) -> list[Obj]:
        st = self.state
        missing = [r.key for r in tx.owned_inputs if r.key not in st.objdb]
        if missing:
            raise MissingObjects(missing)
        return [st.objdb[r.key] for r in tx.owned_inputs]

    def _load_readonly(self, tx: Tx) -> list[Obj]:
        st = self.state
        out = []
        for oid in tx.readonly_inputs:
            obj = st.live(oid)
            if obj is None:
                raise MissingObjects([ObjKey(oid, 0)])
            out.append(obj)
        return out

    def shared_locks_exist(self, cert: TxCert) -> bool:
        d = cert.digest
        return all((d, oid) in self.state.shared_lock for oid, _ in cert.tx.shared_inputs)

    def check_shared_locks(self, cert: TxCert):
        """(ready, shared objects at their locks, deleted shared id -> lock)."""
        st = self.state
        d = cert.digest
        ro = readonly_shared_ids(cert.tx)
        objs, deleted = [], {}
        for oid, _ in cert.tx.shared_inputs:
            lock = st.shared_lock[(d, oid)]
            gone = oid in st.tombstones and st.latest.get(oid) == TOMBSTONE \
                and st.tombstones[oid] <= lock
            if oid in ro:
                obj = st.objdb.get(ObjKey(oid, lock))
            else:
                obj = st.live(oid) if st.latest.get(oid) == lock else None
            if obj is not None:
                objs.append(obj)
            elif gone:
                deleted[oid] = lock
            else:
                return False, [], {}
        return True, objs, deleted

    def assign_shared_locks(self, cert: TxCert, snapshot: Optional[dict] = None) -> None:
        st = self.state
        tx = cert.tx
        d = cert.digest
        if not tx.shared_inputs or self.shared_locks_exist(cert):
            return
        snapshot = st.next_shared_lock if snapshot is None else snapshot
        ro = readonly_shared_ids(tx)
        locks = {}
        for oid, iv in tx.shared_inputs:
            src = snapshot if oid in ro else st.next_shared_lock
            locks[oid] = src.get(oid, iv)
        v_max = max([r.version for r in tx.owned_inputs] + list(locks.values()))
        with st.batch() as b:
            for oid, v in locks.items():
                b.put("shared_lock", (d, oid), v)
                if oid not in ro:
                    b.put("next_shared_lock", oid, v_max + 1)
        self._emit("shared_lock", tx=d, locks=locks)

    # -- execution and persistence ----------------------------------------

    def _execute(self, cert: TxCert, owned, shared, readonly, deleted) -> EffSign:
        st = self.state
        result = exec_tx(cert, owned, shared, self.gas, readonly_objs=readonly,
                         deleted_shared=deleted, lookup_at=st.newest_at_most)
        effsign = EffSign.create(result.effects, self.name, st.epoch, self.attestor)
        if self.behavior == GARBAGE:
            effsign = EffSign(effsign.effects, self.name, effsign.epoch, b"\x00" * 32)
        self.atomic_persist(cert, effsign, result.outputs)
        self.outbox.append(("effsign", cert, effsign))
        self._emit("exec", tx=cert.digest, effects=result.effects.digest(),
                   ok=result.effects.ok)
        return effsign

    def atomic_persist(self, cert: TxCert, effsign: EffSign, outputs: list[Obj]) -> None:
        st = self.state
        eff = effsign.effects
        d = cert.digest
        undo = UndoRecord(d)

        def remember(oid):
            if oid not in undo.latest_before:
                undo.latest_before[oid] = st.latest.get(oid)

        def drop_lock(oid, b):
            prev = st.latest.get(oid)
            if prev:
                b.delete("owned_lock", ObjKey(oid, prev))

        with st.batch() as b:
            b.put("ct", d, (cert, effsign))
            for out in outputs:
                prev = st.latest.get(out.id)
                b.put("objdb", out.key, out)
                undo.written_keys.append(out.key)
                if prev is not None and prev >= out.version:
                    continue  # late replay of an older certificate; keep the newer state
                remember(out.id)
                drop_lock(out.id, b)
                b.put("latest", out.id, out.version)
                if is_owned(out.owner):
                    b.put("owned_lock", out.key, None)
            for key in eff.wrapped:
                remember(key.id)
                drop_lock(key.id, b)
                b.delete("latest", key.id)
            for key in eff.deleted:
                remember(key.id)
                drop_lock(key.id, b)
                undo.tombstone_before[key.id] = st.tombstones.get(key.id)
                b.put("latest", key.id, TOMBSTONE)
                b.put("tombstones", key.id, key.version)
            if not eff.ok:
                gas_id = cert.tx.gas_ref.id
                for key in cert.tx.owned_keys():
                    if key.id != gas_id and st.latest.get(key.id) == key.version:
                        b.put("owned_lock", key, None)
            b.put("undo", d, undo)
            b.add_pending(d)
        st.exec_order.append(d)

    # -- commit stream -----------------------------------------------------

    def schedule_commit(self, commit: Commit) -> None:
        if commit.epoch != self.epoch or commit.seq <= self.last_seq:
            return
        if commit.seq != self.last_seq + 1:
            raise ValueError(f"commit gap: expected {self.last_seq + 1}, got {commit.seq}")
        st = self.state
        snapshot = dict(st.next_shared_lock)
        fresh = []
        for cert in commit.certs:
            if cert.epoch != self.epoch or cert.digest in self.sequenced:
                continue
            if not verify_tx_cert(cert, st.committee, self.attestor):
                continue
            self.sequenced.add(cert.digest)
            fresh.append(cert)
        # read-only shared certs go first so they see the pre-commit versions
        fresh.sort(key=lambda c: 0 if _is_read_only(c) else 1)
        for cert in fresh:
            self.assign_shared_locks(cert, snapshot)
            if cert.digest not in st.ct:
                self.queue.append(cert)
        self._drain_queue()

        cp = self.builder.build([c.digest for c in commit.certs if c.epoch == self.epoch],
                                self.effects_of)
        if isinstance(cp, Checkpoint):
            st.pending_checkpoint -= set(cp.tx_digests())
            self.certifier.add_local(cp)
            if self.behavior != SILENT:
                sig = CheckpointSignature.create(cp, self.name, self.attestor)
                if self.behavior == GARBAGE:
                    sig = CheckpointSignature(self.name, cp.epoch, cp.seq, bytes(32), sig.sig)
                self._submit(sig)
            self._emit("checkpoint", epoch=cp.epoch, seq=cp.seq, digest=cp.digest,
                       txs=cp.tx_digests())
        self.last_seq = commit.seq

        latest = self.builder.latest_seq
        for msg in commit.system:
            if isinstance(msg, CheckpointSignature):
                cert = self.certifier.add_signature(msg, self.attestor)
                if cert is not None:
                    self._emit("checkpoint_cert", epoch=cert.epoch, seq=cert.seq,
                               digest=cert.digest)
            elif isinstance(msg, RegisterVote):
                if msg.sender in st.committee:
                    self.contract.register(msg.sender, st.committee.stake(msg.sender))
            elif isinstance(msg, ReadyVote):
                if self.contract.ready(msg.sender, latest):
                    st.paused = True
                    self.accepting_certs = False
                    self._emit("cutoff", epoch=self.epoch, seq=latest)
            elif isinstance(msg, EndOfEpochVote):
                if self.contract.end_of_epoch(msg.sender, latest):
                    self._emit("epoch_edge", epoch=self.epoch, seq=latest)
            elif isinstance(msg, HandoverCall):
                pass  # handover is applied below once the extra checkpoint exists
        self._drive_reconfig(commit)

    def _drain_queue(self) -> None:
        """Execute sequenced certificates until no more become executable."""
        st = self.state
        progress = True
        while progress and self.queue:
            progress = False
            remaining = []
            for cert in self.queue:
                if cert.digest in st.ct:
                    progress = True
                    continue
                if self._try_execute(cert):
                    progress = True
                else:
                    remaining.append(cert)
            self.queue = remaining

    def _try_execute(self, cert: TxCert) -> bool:
        try:
            owned = self._load_owned(cert.tx)
            readonly = self._load_readonly(cert.tx)
        except MissingObjects:
            return False
        shared, deleted = [], {}
        if cert.tx.shared_inputs:
            ready, shared, deleted = self.check_shared_locks(cert)
            if not ready:
                return False
        self._execute(cert, owned, shared, readonly, deleted)
        return True

    def effects_of(self, d: bytes):
        entry = self.state.ct.get(d)
        return entry[1].effects if entry else None

    # -- reconfiguration driver -------------------------------------------

    def _drive_reconfig(self, commit: Commit) -> None:
        st = self.state
        latest = self.builder.latest_seq
        if self.behavior == SILENT:
            pass
        elif not self.sent_register:
            self.sent_register = True
            self._submit(RegisterVote(self.name, st.committee.stake(self.name)))
        elif not self.sent_ready and latest >= self.S:
            self.sent_ready = True
            self._submit(ReadyVote(self.name))
        if (self.behavior != SILENT and self.contract.phase is Phase.END_OF_EPOCH
                and not self.sent_eoe and not st.pending_checkpoint and not self.queue):
            self.sent_eoe = True
            self._submit(EndOfEpochVote(self.name))
        nxt = self.contract.handover(latest)
        if nxt is not None:
            old_epoch = self.epoch
            epoch_transition(self, Committee(old_epoch + 1, nxt))
            self._emit("handover", epoch=old_epoch, seq=commit.seq,
                       latest_digest=latest_map_digest(self.state))

    def ct_lookup(self, d: bytes):
        return self.state.ct.get(d)


def _is_read_only(cert: TxCert) -> bool:
    tx = cert.tx
    return bool(tx.shared_inputs) and readonly_shared_ids(tx) == set(tx.shared_ids())


def latest_map_digest(st: ValidatorState) -> bytes:
    from .encoding import digest_of
    return digest_of(dict(st.latest))
