"""Built-in command set, static validity checks and deterministic execution.

Object contents are plain values: non-negative ints, bytes, records
(``dict`` keyed by ``str``) and, for wrappers, an embedded :class:`Obj`.
Coins are records ``{"coin": balance}``; counters are ``{"counter": n}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .encoding import canonical
from .messages import Abort, Effects, Success, Tx, TxCert, tx_digest
from .objects import (
    AddressOwner, Obj, ObjectOwner, ObjID, ObjKey, SharedImmutable, SharedMutable,
    Version, derive_object_id, is_owned, lamport_version,
)

ABORT_GAS = 1
ABORT_TYPE = 2
ABORT_AUTH = 3
ABORT_DELETED_SHARED = 4


# -- commands ---------------------------------------------------------------

@canonical
@dataclass(frozen=True)
class TransferOwned:
    obj: ObjID
    recipient: bytes


@canonical
@dataclass(frozen=True)
class TransferToObject:
    child: ObjID
    parent: ObjID


@canonical
@dataclass(frozen=True)
class CreateOwned:
    contents: Any
    recipient: bytes


@canonical
@dataclass(frozen=True)
class CreateShared:
    contents: Any


@canonical
@dataclass(frozen=True)
class MutateOwned:
    obj: ObjID
    new_contents: Any


@canonical
@dataclass(frozen=True)
class Wrap:
    inner: ObjID
    outer: ObjID


@canonical
@dataclass(frozen=True)
class Unwrap:
    outer: ObjID


@canonical
@dataclass(frozen=True)
class DeleteObj:
    obj: ObjID


@canonical
@dataclass(frozen=True)
class IncrementSharedCounter:
    obj: ObjID


@canonical
@dataclass(frozen=True)
class ReadShared:
    obj: ObjID


@canonical
@dataclass(frozen=True)
class AbortWith:
    code: int


@canonical
@dataclass(frozen=True)
class PTB:
    commands: tuple


SIMPLE_COMMANDS = (TransferOwned, TransferToObject, CreateOwned, CreateShared, MutateOwned,
                   Wrap, Unwrap, DeleteObj, IncrementSharedCounter, ReadShared, AbortWith)


def commands_of(kind) -> list:
    return list(kind.commands) if isinstance(kind, PTB) else [kind]


def _mutated_refs(cmd) -> list[ObjID]:
    """Object ids a command may write (excluding creations)."""
    if isinstance(cmd, (TransferOwned, MutateOwned, DeleteObj)):
        return [cmd.obj]
    if isinstance(cmd, TransferToObject):
        return [cmd.child, cmd.parent]
    if isinstance(cmd, Wrap):
        return [cmd.inner, cmd.outer]
    if isinstance(cmd, Unwrap):
        return [cmd.outer]
    if isinstance(cmd, IncrementSharedCounter):
        return [cmd.obj]
    return []


def readonly_shared_ids(tx: Tx) -> set[ObjID]:
    """Shared inputs touched only by ReadShared commands."""
    reads, writes = set(), set()
    for cmd in commands_of(tx.kind):
        if isinstance(cmd, ReadShared):
            reads.add(cmd.obj)
        writes.update(_mutated_refs(cmd))
    return {oid for oid in tx.shared_ids() if oid in reads and oid not in writes}


# -- gas --------------------------------------------------------------------

@dataclass
class GasSchedule:
    base_fee: int = 1
    per_command_cost: dict = field(default_factory=dict)
    default_cost: int = 10
    min_cost: int = 10

    def cost(self, cmd) -> int:
        return self.per_command_cost.get(type(cmd).__name__, self.default_cost)

    def fee(self, gas_used: int, tip: int) -> int:
        return gas_used * self.base_fee + tip


DEFAULT_GAS = GasSchedule()


def coin_value(obj: Obj | None) -> Optional[int]:
    c = obj.contents if obj is not None else None
    if isinstance(c, dict) and isinstance(c.get("coin"), int):
        return c["coin"]
    return None


# -- static validity --------------------------------------------------------

def tx_valid(tx: Tx, owned_objs: Sequence[Obj], schedule: GasSchedule = DEFAULT_GAS,
             lookup: Callable[[ObjID], Optional[Obj]] | None = None,
             readonly_objs: Sequence[Obj] = (), shared_objs: Sequence[Obj] = ()):
    """Return ``(ok, reason)``. Nothing is executed."""
    shape = tx.shape_error()
    if shape:
        return False, shape
    if len(owned_objs) != len(tx.owned_inputs):
        return False, "owned inputs not loaded"
    owned_ids = {r.id for r in tx.owned_inputs}
    for ref, obj in zip(tx.owned_inputs, owned_objs):
        if obj.id != ref.id or obj.version != ref.version:
            return False, "owned input does not match its reference"
        if obj.digest() != ref.contents_digest:
            return False, "owned input digest mismatch"
        if obj.version < 1:
            return False, "tombstoned input"
        if not is_owned(obj.owner):
            return False, "owned input is not single-owner"
        if isinstance(obj.owner, AddressOwner):
            if obj.owner.addr != tx.sender:
                return False, "unauthorized: input owned by another address"
        else:
            if lookup is None:
                return False, "child input needs a store lookup"
            root_ok, why = _static_root_check(obj, tx, owned_ids, lookup)
            if not root_ok:
                return False, why
    for obj in readonly_objs:
        if not isinstance(obj.owner, SharedImmutable):
            return False, "read-only input is not immutable"
    for obj in shared_objs:
        if not isinstance(obj.owner, SharedMutable):
            return False, "shared input is not a shared object"

    gas = owned_objs[list(tx.owned_inputs).index(tx.gas_ref)]
    balance = coin_value(gas)
    if balance is None:
        return False, "gas object is not a coin"
    if tx.gas_budget < schedule.min_cost:
        return False, "insufficient gas: budget below minimum"
    if balance < schedule.fee(tx.gas_budget, tx.tip):
        return False, "insufficient gas: coin cannot cover budget"

    cmds = commands_of(tx.kind)
    if not cmds:
        return False, "empty command list"
    shared_ids = set(tx.shared_ids())
    ro_ids = set(tx.readonly_inputs)
    for cmd in cmds:
        if isinstance(cmd, PTB):
            return False, "nested PTB"
        if not isinstance(cmd, SIMPLE_COMMANDS):
            return False, f"unknown command {type(cmd).__name__}"
        if isinstance(cmd, ReadShared) and cmd.obj not in shared_ids | ro_ids:
            return False, "ReadShared target not declared"
        if isinstance(cmd, IncrementSharedCounter) and cmd.obj not in shared_ids:
            return False, "counter target not a declared shared input"
        for oid in _mutated_refs(cmd):
            if oid == tx.gas_ref.id:
                return False, "gas object used by a command"
            if oid in ro_ids:
                return False, "command mutates a read-only input"
    return True, ""


def _static_root_check(obj: Obj, tx: Tx, owned_ids: set, lookup) -> tuple[bool, str]:
    from .objects import OwnershipCycleError, UnknownObjectError, resolve_root
    try:
        owner, chain = resolve_root(obj.owner.parent, lookup)
    except (OwnershipCycleError, UnknownObjectError) as e:
        return False, f"bad ownership chain: {e}"
    if obj.id in chain:
        return False, "ownership cycle"
    if not (isinstance(owner, AddressOwner) and owner.addr == tx.sender):
        return False, "unauthorized: child root not owned by sender"
    if chain[-1] not in owned_ids:
        return False, "unauthorized: child root is not an input"
    return True, ""


# -- execution --------------------------------------------------------------

class ExecAbort(Exception):
    def __init__(self, code: int, location: str):
        super().__init__(f"abort {code} at {location}")
        self.code = code
        self.location = location


class ContractViolation(RuntimeError):
    """Inputs handed to exec do not match the transaction (a caller bug)."""


@dataclass
class ExecResult:
    effects: Effects
    outputs: list  # Obj written at the new version

    def __iter__(self):
        return iter((self.effects, self.outputs))


class _Session:
    def __init__(self, tx: Tx, digest: bytes, v_new: Version, objs: dict, root_ids: set,
                 shared_ids: set, lookup_at):
        self.tx = tx
        self.digest = digest
        self.v_new = v_new
        self.objs = dict(objs)          # live working set
        self.root_ids = root_ids
        self.shared_ids = shared_ids
        self.lookup_at = lookup_at
        self.start_ids = set(objs)
        # Every write to a child also bumps its root, so the child state that
        # goes with these root inputs is the newest one not above them.
        self.bound = max((objs[i].version for i in root_ids), default=0)
        self.dyn_origin: dict[ObjID, bytes] = {}
        self.touched: set[ObjID] = set()
        self.created: list[ObjID] = []
        self.from_wrapper: set[ObjID] = set()
        self.wrapped: list[ObjID] = []
        self.deleted: list[ObjID] = []
        self.events: list = []
        self.counter = 0

    def _lookup(self, oid: ObjID) -> Optional[Obj]:
        obj = self.objs.get(oid)
        if obj is None and self.lookup_at is not None and oid not in self.start_ids \
                and oid not in self.deleted and oid not in self.wrapped:
            obj = self.lookup_at(oid, self.bound)
        return obj

    def load_chain(self, oid: ObjID, where: str) -> None:
        chain = dynamic_child_load(oid, self._lookup, self.root_ids, self.tx.sender)
        if chain is None:
            raise ExecAbort(ABORT_AUTH, where)
        for o in chain:
            if o.id not in self.objs:
                self.objs[o.id] = o
                self.dyn_origin[o.id] = o.parent_tx
            self.touched.add(o.id)

    def get(self, oid: ObjID, where: str) -> Obj:
        if oid not in self.objs:
            self.load_chain(oid, where)
        return self.objs[oid]

    def authorize_write(self, obj: Obj, where: str, allow_shared: bool = False) -> None:
        if isinstance(obj.owner, SharedImmutable):
            raise ExecAbort(ABORT_AUTH, where)
        if isinstance(obj.owner, SharedMutable):
            if not allow_shared or obj.id not in self.shared_ids:
                raise ExecAbort(ABORT_AUTH, where)
        elif isinstance(obj.owner, AddressOwner):
            if obj.owner.addr != self.tx.sender:
                raise ExecAbort(ABORT_AUTH, where)
        else:
            self.load_chain(obj.id, where)

    def put(self, obj: Obj) -> None:
        self.objs[obj.id] = obj
        self.touched.add(obj.id)

    def new_id(self) -> ObjID:
        oid = derive_object_id(self.digest, self.counter)
        self.counter += 1
        return oid


def dynamic_child_load(child: ObjID, lookup: Callable[[ObjID], Optional[Obj]],
                       root_inputs: Iterable[ObjID], sender: bytes | None = None):
    """Parent chain of ``child`` (root first) when it ends at a root input.

    Returns None when the chain is broken, cyclic, or its root is not among
    ``root_inputs`` (or not owned by ``sender`` when one is given).
    """
    roots = set(root_inputs)
    chain, seen = [], set()
    oid = child
    while True:
        if oid in seen:
            return None
        seen.add(oid)
        obj = lookup(oid)
        if obj is None:
            return None
        chain.append(obj)
        if isinstance(obj.owner, ObjectOwner):
            oid = obj.owner.parent
            continue
        if oid not in roots:
            return None
        if sender is not None and obj.owner != AddressOwner(sender):
            return None
        return list(reversed(chain))


def _run_command(s: _Session, cmd, idx: int) -> None:
    where = f"{idx}:{type(cmd).__name__}"
    tx = s.tx
    if isinstance(cmd, AbortWith):
        raise ExecAbort(cmd.code, where)
    if isinstance(cmd, TransferOwned):
        obj = s.get(cmd.obj, where)
        s.authorize_write(obj, where)
        s.put(obj.evolve(owner=AddressOwner(cmd.recipient)))
    elif isinstance(cmd, TransferToObject):
        child = s.get(cmd.child, where)
        parent = s.get(cmd.parent, where)
        s.authorize_write(child, where)
        s.authorize_write(parent, where)
        # refuse to hang the child beneath its own descendant
        cur, hops = parent, 0
        while isinstance(cur.owner, ObjectOwner):
            if cur.owner.parent == child.id or hops > len(s.objs):
                raise ExecAbort(ABORT_TYPE, where)
            cur = s.get(cur.owner.parent, where)
            hops += 1
        if parent.id == child.id:
            raise ExecAbort(ABORT_TYPE, where)
        s.put(child.evolve(owner=ObjectOwner(parent.id)))
        s.touched.add(parent.id)
    elif isinstance(cmd, CreateOwned):
        oid = s.new_id()
        s.put(Obj(oid, s.v_new, s.v_new, AddressOwner(cmd.recipient), cmd.contents, s.digest))
        s.created.append(oid)
    elif isinstance(cmd, CreateShared):
        oid = s.new_id()
        s.put(Obj(oid, s.v_new, s.v_new, SharedMutable(), cmd.contents, s.digest))
        s.created.append(oid)
    elif isinstance(cmd, MutateOwned):
        obj = s.get(cmd.obj, where)
        s.authorize_write(obj, where)
        s.put(obj.evolve(contents=cmd.new_contents))
    elif isinstance(cmd, Wrap):
        inner = s.get(cmd.inner, where)
        outer = s.get(cmd.outer, where)
        if inner.id == outer.id:
            raise ExecAbort(ABORT_TYPE, where)
        s.authorize_write(inner, where)
        s.authorize_write(outer, where)
        if isinstance(outer.contents, dict) and "wrapped" in outer.contents:
            raise ExecAbort(ABORT_TYPE, where)
        if _has_children(s, inner.id):
            raise ExecAbort(ABORT_TYPE, where)
        s.put(outer.evolve(contents={"value": outer.contents, "wrapped": inner}))
        del s.objs[inner.id]
        s.touched.discard(inner.id)
        s.wrapped.append(inner.id)
    elif isinstance(cmd, Unwrap):
        outer = s.get(cmd.outer, where)
        s.authorize_write(outer, where)
        c = outer.contents
        if not (isinstance(c, dict) and isinstance(c.get("wrapped"), Obj)):
            raise ExecAbort(ABORT_TYPE, where)
        inner = c["wrapped"]
        s.put(outer.evolve(contents=c.get("value")))
        s.put(inner.evolve(owner=AddressOwner(tx.sender)))
        s.from_wrapper.add(inner.id)
    elif isinstance(cmd, DeleteObj):
        obj = s.get(cmd.obj, where)
        s.authorize_write(obj, where, allow_shared=True)
        if _has_children(s, obj.id):
            raise ExecAbort(ABORT_TYPE, where)
        del s.objs[obj.id]
        s.touched.discard(obj.id)
        s.deleted.append(obj.id)
    elif isinstance(cmd, IncrementSharedCounter):
        obj = s.get(cmd.obj, where)
        s.authorize_write(obj, where, allow_shared=True)
        c = obj.contents
        if not (isinstance(c, dict) and isinstance(c.get("counter"), int)):
            raise ExecAbort(ABORT_TYPE, where)
        n = c["counter"] + 1
        s.put(obj.evolve(contents={**c, "counter": n}))
        s.events.append(("counter", n.to_bytes(8, "big")))
    elif isinstance(cmd, ReadShared):
        obj = s.get(cmd.obj, where)
        if is_owned(obj.owner):
            raise ExecAbort(ABORT_TYPE, where)
    else:
        raise ExecAbort(ABORT_TYPE, where)


def _has_children(s: _Session, oid: ObjID) -> bool:
    return any(isinstance(o.owner, ObjectOwner) and o.owner.parent == oid for o in s.objs.values())


def exec_tx(cert_or_tx, owned_objs: Sequence[Obj], shared_objs: Sequence[Obj] = (),
            schedule: GasSchedule = DEFAULT_GAS, readonly_objs: Sequence[Obj] = (),
            deleted_shared: Mapping[ObjID, Version] | None = None,
            lookup_at: Callable[[ObjID, Version], Optional[Obj]] | None = None) -> ExecResult:
    """Execute a certified transaction against exactly its input objects.

    ``shared_objs`` are the shared inputs at their locked versions; a shared
    input that was deleted before its turn is given in ``deleted_shared`` as
    ``id -> locked version`` instead. ``lookup_at(id, bound)`` returns the
    newest stored version of ``id`` not above ``bound`` and serves dynamic
    child loads.
    """
    tx: Tx = cert_or_tx.tx if isinstance(cert_or_tx, TxCert) else cert_or_tx
    deleted_shared = dict(deleted_shared or {})
    digest = tx_digest(tx)

    if [o.key for o in owned_objs] != tx.owned_keys():
        raise ContractViolation("owned objects do not match owned input references")
    got_shared = {o.id for o in shared_objs} | set(deleted_shared)
    if got_shared != set(tx.shared_ids()) or len(shared_objs) + len(deleted_shared) != len(tx.shared_inputs):
        raise ContractViolation("shared objects do not match shared inputs")
    if {o.id for o in readonly_objs} != set(tx.readonly_inputs):
        raise ContractViolation("read-only objects do not match read-only inputs")

    ro_shared = readonly_shared_ids(tx)
    versions = [o.version for o in owned_objs] + [o.version for o in shared_objs]
    versions += list(deleted_shared.values())
    v_new = lamport_version(versions)

    gas_idx = list(tx.owned_inputs).index(tx.gas_ref)
    gas = owned_objs[gas_idx]
    start = {o.id: o for o in list(owned_objs) + list(shared_objs) + list(readonly_objs)}
    owned_ids = {o.id for o in owned_objs}
    mutable_shared = [o for o in shared_objs if o.id not in ro_shared]
    deps = [o.parent_tx for o in owned_objs] + [o.parent_tx for o in readonly_objs] + \
           [o.parent_tx for o in shared_objs]

    s = _Session(tx, digest, v_new, {k: v for k, v in start.items() if k != gas.id},
                 owned_ids - {gas.id}, {o.id for o in shared_objs}, lookup_at)
    for o in owned_objs:
        if o.id != gas.id:
            s.touched.add(o.id)
    for o in mutable_shared:
        s.touched.add(o.id)

    cmds = commands_of(tx.kind)
    gas_used = sum(schedule.cost(c) for c in cmds)
    status: Any = Success()
    try:
        if deleted_shared:
            raise ExecAbort(ABORT_DELETED_SHARED, "shared input deleted")
        if gas_used > tx.gas_budget:
            gas_used = tx.gas_budget
            raise ExecAbort(ABORT_GAS, "gas budget exceeded")
        for i, cmd in enumerate(cmds):
            _run_command(s, cmd, i)
    except ExecAbort as e:
        status = Abort(e.code, e.location)

    fee = schedule.fee(gas_used, tx.tip)
    new_gas = gas.evolve(version=v_new, parent_tx=digest,
                         contents={**gas.contents, "coin": coin_value(gas) - fee})

    if not isinstance(status, Success):
        # All or nothing: only the fee is charged. Mutable shared inputs
        # still advance so the next holder of the shared lock can proceed.
        outs = [new_gas] + [o.evolve(version=v_new, parent_tx=digest) for o in mutable_shared]
        eff = Effects(digest, status, gas_used,
                      mutated=tuple(o.ref() for o in sorted(outs, key=lambda o: o.id)),
                      dependencies=tuple(deps))
        return ExecResult(eff, outs)

    outs, created, mutated, unwrapped = [], [], [], []
    for oid in sorted(s.touched):
        obj = s.objs.get(oid)
        if obj is None:
            continue
        out = obj.evolve(version=v_new, parent_tx=digest)
        outs.append(out)
        if oid in s.start_ids or oid in s.dyn_origin:
            mutated.append(out.ref())
        elif oid in s.from_wrapper and oid not in s.created:
            unwrapped.append(out.ref())
        else:
            created.append(out.ref())
    outs.append(new_gas)
    mutated.append(new_gas.ref())
    originally_live = s.start_ids | set(s.dyn_origin) | s.from_wrapper
    wrapped = [ObjKey(i, v_new) for i in sorted(set(s.wrapped))
               if i not in s.objs and i in originally_live]
    deleted = [ObjKey(i, v_new) for i in sorted(set(s.deleted)) if i in originally_live]
    deps += [s.dyn_origin[i] for i in sorted(s.dyn_origin)]
    outs.sort(key=lambda o: o.id)
    eff = Effects(digest, status, gas_used,
                  created=tuple(sorted(created, key=lambda r: r.id)),
                  mutated=tuple(sorted(mutated, key=lambda r: r.id)),
                  unwrapped=tuple(sorted(unwrapped, key=lambda r: r.id)),
                  wrapped=tuple(wrapped), deleted=tuple(deleted),
                  events=tuple(s.events), dependencies=tuple(deps))
    return ExecResult(eff, outs)


# short alias
exec = exec_tx  # noqa: A001
