"""Validator tables with atomic write batches and crash injection."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Any, Optional

from .committee import Committee, EpochID
from .objects import TOMBSTONE, Obj, ObjID, ObjKey, TxDigest, Version, is_owned

_DELETE = object()


class SimulatedCrash(Exception):
    """Raised by a crash hook; the batch in progress is discarded."""


@dataclass
class UndoRecord:
    """Pre-images needed to roll back one executed certificate."""
    digest: TxDigest
    latest_before: dict = field(default_factory=dict)     # id -> version or None
    tombstone_before: dict = field(default_factory=dict)  # id -> version or None
    written_keys: list = field(default_factory=list)


@dataclass
class ValidatorState:
    epoch: EpochID
    committee: Committee
    owned_lock: dict = field(default_factory=dict)        # ObjKey -> TxSign | None
    shared_lock: dict = field(default_factory=dict)       # (TxDigest, ObjID) -> Version
    next_shared_lock: dict = field(default_factory=dict)  # ObjID -> Version
    ct: dict = field(default_factory=dict)                # TxDigest -> (TxCert, EffSign)
    objdb: dict = field(default_factory=dict)             # ObjKey -> Obj
    latest: dict = field(default_factory=dict)            # ObjID -> Version (0 = tombstone)
    tombstones: dict = field(default_factory=dict)        # ObjID -> deletion version
    pending_checkpoint: set = field(default_factory=set)
    paused: bool = False
    undo: dict = field(default_factory=dict)              # TxDigest -> UndoRecord
    exec_order: list = field(default_factory=list)
    versions: dict = field(default_factory=dict)          # ObjID -> sorted stored versions
    crash_hook: Any = None

    # -- reads ---------------------------------------------------------------

    def live(self, oid: ObjID) -> Optional[Obj]:
        v = self.latest.get(oid)
        if not v:
            return None
        return self.objdb.get(ObjKey(oid, v))

    def get(self, key: ObjKey) -> Optional[Obj]:
        return self.objdb.get(key)

    def newest_at_most(self, oid: ObjID, bound: Version) -> Optional[Obj]:
        """Newest stored version of ``oid`` not above ``bound``."""
        vs = self.versions.get(oid, [])
        i = bisect.bisect_right(vs, bound)
        return self.objdb.get(ObjKey(oid, vs[i - 1])) if i else None

    def _index_put(self, key: ObjKey) -> None:
        vs = self.versions.setdefault(key.id, [])
        i = bisect.bisect_left(vs, key.version)
        if i == len(vs) or vs[i] != key.version:
            vs.insert(i, key.version)

    def _index_drop(self, key: ObjKey) -> None:
        vs = self.versions.get(key.id, [])
        if key.version in vs:
            vs.remove(key.version)

    def is_deleted(self, oid: ObjID) -> bool:
        return self.latest.get(oid) == TOMBSTONE and oid in self.tombstones

    def latest_map(self) -> dict:
        return {k: v for k, v in self.latest.items()}

    def batch(self) -> "Batch":
        return Batch(self)

    def seed_genesis(self, objs) -> None:
        for o in objs:
            self.objdb[o.key] = o
            self._index_put(o.key)
            self.latest[o.id] = o.version
            if is_owned(o.owner):
                self.owned_lock[o.key] = None


class Batch:
    """Staged writes applied all at once by :meth:`commit`.

    A crash hook (``state.crash_hook(stage)``) may raise
    :class:`SimulatedCrash` while writes are being staged; nothing staged
    becomes visible in that case.
    """

    def __init__(self, state: ValidatorState):
        self.state = state
        self.ops: list[tuple[str, Any, Any]] = []
        self.pending_add: set = set()

    def _stage(self, table: str, key, value) -> None:
        self.ops.append((table, key, value))
        hook = self.state.crash_hook
        if hook is not None:
            hook(len(self.ops))

    def put(self, table: str, key, value) -> None:
        self._stage(table, key, value)

    def delete(self, table: str, key) -> None:
        self._stage(table, key, _DELETE)

    def add_pending(self, digest: TxDigest) -> None:
        self.pending_add.add(digest)

    def commit(self) -> None:
        st = self.state
        for table, key, value in self.ops:
            t = getattr(st, table)
            if value is _DELETE:
                t.pop(key, None)
                if table == "objdb":
                    st._index_drop(key)
            else:
                t[key] = value
                if table == "objdb":
                    st._index_put(key)
        st.pending_checkpoint |= self.pending_add
        self.ops = []

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.commit()
        return False
