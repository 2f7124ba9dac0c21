"""Object identity, versions, ownership and the Lamport version rule."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Callable, Optional, Union

from .encoding import DIGEST_SIZE, canonical, digest, digest_of

ObjID = bytes
TxDigest = bytes
Address = bytes
Version = int

TOMBSTONE: Version = 0
GENESIS_DIGEST: TxDigest = bytes(DIGEST_SIZE)


class UnknownObjectError(LookupError):
    def __init__(self, obj_id: ObjID):
        super().__init__(f"unknown object {obj_id.hex()[:16]}")
        self.obj_id = obj_id


class OwnershipCycleError(ValueError):
    pass


@canonical
@dataclass(frozen=True)
class AddressOwner:
    addr: Address


@canonical
@dataclass(frozen=True)
class ObjectOwner:
    parent: ObjID


@canonical
@dataclass(frozen=True)
class SharedMutable:
    pass


@canonical
@dataclass(frozen=True)
class SharedImmutable:
    pass


Ownership = Union[AddressOwner, ObjectOwner, SharedMutable, SharedImmutable]


def is_owned(owner: Ownership) -> bool:
    """Owned objects go through the consistent-broadcast lock table."""
    return isinstance(owner, (AddressOwner, ObjectOwner))


@canonical
@dataclass(frozen=True)
class ObjKey:
    id: ObjID
    version: Version


@canonical
@dataclass(frozen=True)
class ObjRef:
    id: ObjID
    version: Version
    contents_digest: bytes

    @property
    def key(self) -> ObjKey:
        return ObjKey(self.id, self.version)


@canonical
@dataclass(frozen=True)
class Obj:
    id: ObjID
    version: Version
    initial_version: Version
    owner: Ownership
    contents: Any
    parent_tx: TxDigest

    def __post_init__(self):
        if self.version < 1:
            raise ValueError("live objects have version >= 1")
        if self.initial_version > self.version:
            raise ValueError("initial_version must not exceed version")

    @property
    def key(self) -> ObjKey:
        return ObjKey(self.id, self.version)

    def digest(self) -> bytes:
        d = self.__dict__.get("_digest")
        if d is None:
            d = digest_of(self)
            object.__setattr__(self, "_digest", d)
        return d

    def ref(self) -> ObjRef:
        return ObjRef(self.id, self.version, self.digest())

    def evolve(self, **changes) -> "Obj":
        return dataclasses.replace(self, **changes)


def derive_object_id(tx_digest: TxDigest, counter: int) -> ObjID:
    """Id of the ``counter``-th object created by the transaction."""
    if counter < 0:
        raise ValueError("counter must be non-negative")
    return digest(tx_digest + counter.to_bytes(8, "big"))


def address_of(public_key: bytes) -> Address:
    return digest(b"addr:" + public_key)


def lamport_version(input_versions) -> Version:
    versions = list(input_versions)
    if not versions:
        raise ValueError("lamport_version needs at least one input version")
    if min(versions) < 1:
        raise ValueError("tombstoned inputs have no Lamport successor")
    return 1 + max(versions)


def resolve_root(obj_id: ObjID, lookup: Callable[[ObjID], Optional[Obj]]):
    """Follow object-ownership links up to the first non-child owner.

    Returns ``(ownership, chain)`` where ``chain`` lists the ids walked,
    starting with ``obj_id`` and ending with the root object.
    """
    chain = [obj_id]
    seen = {obj_id}
    obj = lookup(obj_id)
    if obj is None:
        raise UnknownObjectError(obj_id)
    while isinstance(obj.owner, ObjectOwner):
        parent = obj.owner.parent
        if parent in seen:
            raise OwnershipCycleError(f"ownership cycle through {parent.hex()[:16]}")
        seen.add(parent)
        chain.append(parent)
        obj = lookup(parent)
        if obj is None:
            raise UnknownObjectError(parent)
    return obj.owner, chain
