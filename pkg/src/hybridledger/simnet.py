"""Deterministic discrete-event simulation of validators, sequencer and clients."""

from __future__ import annotations

import hashlib
import heapq
import json
import random
import statistics
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Optional

from .client import (
    CERTIFYING, DONE, SETTLING, SIGNING, STALLED, WAIT_EPOCH, Driver, TxRecord, renew_tx,
)
from .committee import Committee
from .consensus import EpochClosed, RejectedSubmission, Sequencer
from .crypto import MacAttestor
from .encoding import digest
from .execution import (
    GasSchedule, IncrementSharedCounter, MutateOwned, PTB, ReadShared, TransferOwned,
    commands_of,
)
from .messages import EffSign, Tx, TxCert, sign_tx, tx_digest
from .objects import GENESIS_DIGEST, AddressOwner, Obj, ObjKey, ObjRef, SharedMutable
from .validator import Forwarded, ProtocolError, Validator


class ScenarioError(ValueError):
    pass


@dataclass
class ClientSpec:
    name: str = ""
    kind: str = "owned"          # owned | shared | mixed | read | ptb
    txs: int = 5
    behavior: str = "correct"    # correct | equivocator | crasher | resubmitter
    start: int = 0
    think: int = 0
    objects: int = 2
    ptb_size: int = 100
    shared_ratio: float = 0.5
    split: Optional[dict] = None  # equivocator: validator -> "A" | "B" | "AB" | "BA" | ""
    target: int = 0               # crasher: index of the only validator it sends the cert to


@dataclass
class CrashSpec:
    validator: str
    at: int
    recover: Optional[int] = None


@dataclass
class Scenario:
    name: str = "custom"
    seed: int = 0
    validators: int = 4
    stakes: Optional[dict] = None
    delay_min: int = 10
    delay_max: int = 50
    drop_prob: float = 0.0
    rto: int = 100
    max_retx: int = 3
    commit_interval: int = 120
    S: int = 8
    T: int = 1
    duration: int = 20_000
    counters: int = 1
    coin: int = 10 ** 12
    gas_budget: int = 100
    tip: int = 0
    base_fee: int = 1
    crashes: list = field(default_factory=list)
    byzantine: dict = field(default_factory=dict)
    clients: list = field(default_factory=list)
    record_network: bool = False
    stop_when_idle: bool = True
    retry_after: int = 600
    epochs: Optional[int] = None   # stop once every live correct validator reached this epoch

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        if not isinstance(raw, dict):
            raise ScenarioError("scenario must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
        data = dict(raw)
        try:
            data["clients"] = [c if isinstance(c, ClientSpec) else ClientSpec(**c)
                               for c in data.get("clients", [])]
            data["crashes"] = [c if isinstance(c, CrashSpec) else CrashSpec(**c)
                               for c in data.get("crashes", [])]
        except TypeError as e:
            raise ScenarioError(str(e)) from None
        sc = cls(**data)
        sc.validate()
        return sc

    def committee(self) -> Committee:
        if self.stakes:
            return Committee(0, dict(self.stakes))
        return Committee.equal_stake(self.validators)

    def validate(self) -> None:
        if self.stakes is None and self.validators < 1:
            raise ScenarioError("need at least one validator")
        if not 0 <= self.delay_min <= self.delay_max:
            raise ScenarioError("delay range must satisfy 0 <= min <= max")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ScenarioError("drop_prob must be in [0, 1)")
        if self.commit_interval <= 0 or self.duration <= 0:
            raise ScenarioError("commit_interval and duration must be positive")
        names = set(self.committee().members)
        for c in self.crashes:
            if c.validator not in names:
                raise ScenarioError(f"crash of unknown validator {c.validator}")
        for v, b in self.byzantine.items():
            if v not in names:
                raise ScenarioError(f"byzantine behaviour for unknown validator {v}")
            if b not in ("equivocate", "silent", "garbage"):
                raise ScenarioError(f"unknown byzantine behaviour {b}")
        for i, c in enumerate(self.clients):
            if c.kind not in ("owned", "shared", "mixed", "read", "ptb"):
                raise ScenarioError(f"unknown client kind {c.kind}")
            if c.behavior not in ("correct", "equivocator", "crasher", "resubmitter"):
                raise ScenarioError(f"unknown client behaviour {c.behavior}")
            if not c.name:
                c.name = f"c{i}"


def load_scenario(path) -> Scenario:
    import yaml
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        raise ScenarioError(f"malformed scenario file: {e}") from None
    return Scenario.from_dict(raw)


# -- trace helpers --------------------------------------------------------------

def _jsonable(v):
    if isinstance(v, bytes):
        return v.hex()
    if isinstance(v, ObjKey):
        return [v.id.hex(), v.version]
    if isinstance(v, (list, tuple, set, frozenset)):
        items = [_jsonable(x) for x in v]
        return sorted(items) if isinstance(v, (set, frozenset)) else items
    if isinstance(v, dict):
        return {(k.hex() if isinstance(k, bytes) else str(k)): _jsonable(x) for k, x in v.items()}
    return v


@dataclass
class Trace:
    records: list = field(default_factory=list)

    def add(self, t, actor, ev, **data) -> None:
        rec = {"t": t, "actor": actor, "ev": ev}
        for k, v in data.items():
            rec[k] = _jsonable(v)
        self.records.append(rec)

    def lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode() + b"\n")
        return h.hexdigest()

    def write(self, path) -> None:
        lines = self.lines()
        h = hashlib.sha256()
        with open(path, "w") as fh:
            for line in lines:
                fh.write(line + "\n")
                h.update(line.encode() + b"\n")
            fh.write(json.dumps({"ev": "footer", "count": len(lines), "digest": h.hexdigest()},
                                sort_keys=True) + "\n")


class CorruptTrace(ValueError):
    pass


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise CorruptTrace("empty trace")
    try:
        footer = json.loads(raw[-1])
    except json.JSONDecodeError:
        raise CorruptTrace("trace is truncated (no footer)") from None
    if footer.get("ev") != "footer":
        raise CorruptTrace("trace is truncated (no footer)")
    body = raw[:-1]
    if footer.get("count") != len(body):
        raise CorruptTrace("record count does not match footer")
    h = hashlib.sha256()
    for line in body:
        h.update(line.encode() + b"\n")
    if h.hexdigest() != footer.get("digest"):
        raise CorruptTrace("trace digest does not match footer")
    try:
        return [json.loads(line) for line in body]
    except json.JSONDecodeError as e:
        raise CorruptTrace(f"bad record: {e}") from None


# -- simulation -----------------------------------------------------------------

def _stable_seed(*parts) -> int:
    return int.from_bytes(hashlib.sha256(repr(parts).encode()).digest()[:8], "big")


def _gid(*parts) -> bytes:
    return digest(("genesis:" + ":".join(map(str, parts))).encode())


@dataclass
class RunResult:
    scenario: Scenario
    trace: Trace
    records: list
    validators: dict
    metrics: dict
    checks: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.checks.values())


class Simulation:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.sc = scenario
        self.now = 0
        self._heap: list = []
        self._n = 0
        self._occ: dict = {}
        self.trace = Trace()
        self.attestor = MacAttestor()
        self.gas = GasSchedule(base_fee=scenario.base_fee)
        self.committee = scenario.committee()
        self.committees = {0: self.committee}
        self.sequencer = Sequencer(self.attestor)
        self.sequencer.add_committee(self.committee)
        self.crashed: set = set()
        self.cbuf: dict = {}
        self.owner_of: dict = {}        # tx digest -> client name
        self.cert_store: dict = {}      # tx digest -> TxCert (shared gateway knowledge)
        self.creator: dict = {}         # ObjKey -> tx digest
        self.stopped = False
        self._idle_ticks = 0

        genesis = []
        self.counter_ids = []
        for i in range(scenario.counters):
            oid = _gid("counter", i)
            genesis.append(Obj(oid, 1, 1, SharedMutable(), {"counter": 0}, GENESIS_DIGEST))
            self.counter_ids.append(oid)
        self.clients: dict = {}
        for spec in scenario.clients:
            c = SimClient(self, spec)
            genesis.extend(c.genesis())
            self.clients[spec.name] = c
        self.genesis = genesis
        self.validators: dict = {}
        for name in self.committee.ids():
            self.validators[name] = Validator(
                name, self.committee, genesis, attestor=self.attestor, gas=self.gas,
                S=scenario.S, T=scenario.T, behavior=scenario.byzantine.get(name, "honest"))
            self.cbuf[name] = {}
        self.trace.add(0, "sim", "header", scenario=scenario.name, seed=scenario.seed,
                       committee=self.committee.members,
                       faulty=sorted(scenario.byzantine), commit_interval=scenario.commit_interval)

    # -- event loop ---------------------------------------------------------

    def at(self, t, fn: Callable, *args) -> None:
        self._n += 1
        heapq.heappush(self._heap, (t, self._n, fn, args))

    def run(self) -> RunResult:
        sc = self.sc
        for c in sc.crashes:
            self.at(c.at, self._crash, c.validator)
            if c.recover is not None:
                self.at(c.recover, self._recover, c.validator)
        for c in self.clients.values():
            self.at(c.spec.start, c.start)
        self.at(sc.commit_interval, self._tick)
        while self._heap and not self.stopped:
            t, _, fn, args = heapq.heappop(self._heap)
            if t > sc.duration:
                break
            self.now = t
            fn(*args)
        for name, v in self.validators.items():
            counters = {}
            for oid in self.counter_ids:
                obj = v.state.live(oid)
                counters[oid] = obj.contents["counter"] if obj else None
            from .validator import latest_map_digest
            self.trace.add(self.now, name, "state", epoch=v.epoch, counters=counters,
                           latest_digest=latest_map_digest(v.state),
                           crashed=name in self.crashed)
        from .invariants import check_trace
        records = [c for cl in self.clients.values() for c in cl.history]
        result = RunResult(sc, self.trace, records, self.validators, self._metrics(records))
        result.checks = check_trace(self.trace.records)
        return result

    # -- network ------------------------------------------------------------

    def send(self, src: str, dst: str, msg: tuple, key=b"") -> None:
        sc = self.sc
        kind = msg[0]
        okey = (src, dst, kind, key)
        occ = self._occ.get(okey, 0)
        self._occ[okey] = occ + 1
        rng = random.Random(_stable_seed(sc.seed, src, dst, kind, key, occ))
        delay = rng.randint(sc.delay_min, sc.delay_max)
        retx = 0
        while sc.drop_prob and retx < sc.max_retx and rng.random() < sc.drop_prob:
            retx += 1
        total = retx * sc.rto + delay
        self.at(self.now + total, self._deliver, src, dst, msg, self.now)

    def _deliver(self, src, dst, msg, sent_at) -> None:
        if self.sc.record_network:
            self.trace.add(self.now, dst, "deliver", src=src, kind=msg[0], sent=sent_at,
                           tx=_msg_tx(msg))
        if dst in self.crashed:
            return
        if dst == "consensus":
            self._sequencer_recv(msg)
        elif dst in self.validators:
            self._validator_recv(dst, src, msg)
        elif dst in self.clients:
            self.clients[dst].recv(src, msg)

    # -- sequencer ----------------------------------------------------------

    def _sequencer_recv(self, msg) -> None:
        _, item, epoch = msg
        try:
            self.sequencer.submit(item, epoch)
        except (EpochClosed, RejectedSubmission):
            pass

    def _tick(self) -> None:
        c = self.sequencer.cut()
        self.trace.add(self.now, "consensus", "commit", epoch=c.epoch, seq=c.seq,
                       txs=[x.digest for x in c.certs], system=len(c.system))
        for name in self.validators:
            self.send("consensus", name, ("commit", c), key=(c.epoch, c.seq))
        if self.sc.epochs is not None and self._reached(self.sc.epochs):
            self.stopped = True
            return
        if self.sc.stop_when_idle and self._idle():
            self._idle_ticks += 1
            if self._idle_ticks >= 3:
                self.stopped = True
                return
        else:
            self._idle_ticks = 0
        self.at(self.now + self.sc.commit_interval, self._tick)

    def _reached(self, epoch: int) -> bool:
        return all(v.epoch >= epoch for n, v in self.validators.items()
                   if n not in self.crashed and n not in self.sc.byzantine)

    def _idle(self) -> bool:
        if self.sc.epochs is not None:
            return False
        if any(not c.finished for c in self.clients.values()):
            return False
        if any(c.recover is not None and c.recover > self.now for c in self.sc.crashes):
            return False
        for name, v in self.validators.items():
            if name in self.crashed or name in self.sc.byzantine:
                continue
            if v.state.pending_checkpoint or v.queue:
                return False
        return True

    # -- validators -----------------------------------------------------------

    def _validator_recv(self, name: str, src: str, msg: tuple) -> None:
        v = self.validators[name]
        kind = msg[0]
        silent = v.behavior == "silent"
        reply = None
        skip_push = None
        if kind == "commit":
            c = msg[1]
            if c.epoch >= v.epoch:
                self.cbuf[name][(c.epoch, c.seq)] = c
            self._drain_commits(name)
        elif kind == "tx":
            tx = msg[1]
            try:
                reply = ("txsign", v.process_tx(tx))
            except ProtocolError as e:
                reply = ("txerr", tx_digest(tx), e.kind, _err_info(e))
        elif kind in ("cert", "sync"):
            cert = msg[1]
            try:
                r = v.process_cert(cert)
                reply = ("certreply", cert.digest, r)
                skip_push = cert.digest
            except ProtocolError as e:
                if e.kind == "not-scheduled":
                    reply = ("certreply", cert.digest, "scheduled")
                else:
                    reply = ("certerr", cert.digest, e.kind, _err_info(e))
        elif kind == "query":
            entry = v.state.ct.get(msg[1])
            reply = ("queryreply", msg[1], entry[1] if entry else None)
        if reply is not None and not silent:
            self.send(name, src, reply, key=_msg_tx(reply))
        self._flush(name, skip_push)

    def _drain_commits(self, name: str) -> None:
        v = self.validators[name]
        buf = self.cbuf[name]
        while True:
            nxt = buf.pop((v.epoch, v.last_seq + 1), None)
            if nxt is None:
                break
            before = v.epoch
            v.schedule_commit(nxt)
            if v.epoch != before:
                self._on_handover(name, before, nxt.seq)
            self._flush(name)
        for k in [k for k in buf if k[0] < v.epoch]:
            del buf[k]

    def _on_handover(self, name: str, old_epoch: int, seq: int) -> None:
        v = self.validators[name]
        self.committees.setdefault(v.epoch, v.committee)
        self.sequencer.close_epoch(old_epoch, seq, v.committee)
        for c in self.clients:
            self.send(name, c, ("epoch", v.epoch), key=v.epoch)

    def _flush(self, name: str, skip_push=None) -> None:
        v = self.validators[name]
        silent = v.behavior == "silent"
        for item in v.outbox:
            if item[0] == "consensus":
                if not silent:
                    self.send(name, "consensus", ("submit", item[1], item[2]),
                              key=_item_key(item[1]))
            elif item[0] == "effsign":
                cert, eff = item[1], item[2]
                owner = self.owner_of.get(cert.digest)
                if owner is not None and cert.digest != skip_push and not silent:
                    self.send(name, owner, ("effsign", eff), key=cert.digest)
        v.outbox.clear()
        for kind, data in v.events:
            self.trace.add(self.now, name, kind, epoch=data.pop("epoch", v.epoch), **data)
        v.events.clear()

    def _crash(self, name: str) -> None:
        self.crashed.add(name)
        self.cbuf[name] = {}
        self.validators[name].outbox.clear()
        self.trace.add(self.now, name, "crash")

    def _recover(self, name: str) -> None:
        self.crashed.discard(name)
        v = self.validators[name]
        self.trace.add(self.now, name, "recover", epoch=v.epoch, seq=v.last_seq)
        # replay the commit stream from the last delivered position
        while True:
            pending = self.sequencer.commits(v.epoch, v.last_seq + 1)
            if not pending:
                break
            before = v.epoch
            for c in pending:
                v.schedule_commit(c)
                if v.epoch != before:
                    self._on_handover(name, before, c.seq)
                    self._flush(name)
                    break
                self._flush(name)
            if v.epoch == before:
                break

    # -- metrics ----------------------------------------------------------------

    def _metrics(self, records: list) -> dict:
        final = [r.final - r.submit for r in records if r.final is not None]
        settle = [r.settle - r.submit for r in records if r.settle is not None]
        settled = [r for r in records if r.settle is not None]
        span = max(self.now, 1)

        def pct(xs, q):
            if not xs:
                return None
            xs = sorted(xs)
            return xs[min(len(xs) - 1, int(q * len(xs)))]

        cps = [r for r in self.trace.records if r["ev"] == "checkpoint"]
        first_v = self.committee.ids()[0]
        return {
            "txs": len(records),
            "settled": len(settled),
            "finalized": len(final),
            "aborted": sum(1 for r in settled if r.aborted),
            "finality_p50": pct(final, 0.5), "finality_p95": pct(final, 0.95),
            "settlement_p50": pct(settle, 0.5), "settlement_p95": pct(settle, 0.95),
            "finality_mean": statistics.fmean(final) if final else None,
            "settlement_mean": statistics.fmean(settle) if settle else None,
            "cert_per_ktick": 1000 * len(settled) / span,
            "ops_per_ktick": 1000 * sum(r.ops for r in settled) / span,
            "checkpoints": sum(1 for r in cps if r["actor"] == first_v),
            "epochs": 1 + sum(1 for r in self.trace.records
                              if r["ev"] == "handover" and r["actor"] == first_v),
            "sim_time": self.now,
        }


def _msg_tx(msg):
    for x in msg[1:]:
        if isinstance(x, Tx):
            return tx_digest(x)
        if isinstance(x, TxCert):
            return x.digest
        if isinstance(x, EffSign):
            return x.effects.tx_digest
        if isinstance(x, bytes) and len(x) == 32:
            return x
        if hasattr(x, "tx_digest") and isinstance(getattr(x, "tx_digest"), bytes):
            return x.tx_digest
    return b""


def _item_key(item):
    if isinstance(item, TxCert):
        return item.digest
    return repr(item)[:80]


def _err_info(e: ProtocolError):
    if hasattr(e, "keys"):
        return tuple(e.keys)
    if hasattr(e, "expected"):
        return e.expected
    return str(e)


# -- simulated client -------------------------------------------------------------

class SimClient:
    def __init__(self, sim: Simulation, spec: ClientSpec):
        self.sim = sim
        self.spec = spec
        self.name = spec.name
        self.addr = sim.attestor.new_user(f"{sim.sc.seed}:{spec.name}")
        self.rng = random.Random(_stable_seed(sim.sc.seed, "client", spec.name))
        self.epoch = 0
        self.committee = sim.committee
        self.issued = 0
        self.history: list[TxRecord] = []
        self.driver: Optional[Driver] = None
        self.finished = False
        self.halted = False
        self.epoch_votes: dict = {}
        self.gas: Optional[ObjRef] = None
        self.owned: list[ObjRef] = []
        self._retry_token = 0
        self.equivocation: Optional[dict] = None

    def genesis(self) -> list[Obj]:
        sc = self.sim.sc
        gas = Obj(_gid(sc.seed, self.name, "gas"), 1, 1, AddressOwner(self.addr),
                  {"coin": sc.coin}, GENESIS_DIGEST)
        n = self.spec.ptb_size if self.spec.kind == "ptb" else self.spec.objects
        objs = [Obj(_gid(sc.seed, self.name, "obj", i), 1, 1, AddressOwner(self.addr),
                    {"n": 0}, GENESIS_DIGEST) for i in range(max(n, 1))]
        self.gas = gas.ref()
        self.owned = [o.ref() for o in objs]
        return [gas] + objs

    # -- helpers --

    def trace(self, ev, **data):
        self.sim.trace.add(self.sim.now, self.name, ev, **data)

    def vnames(self):
        return self.committee.ids()

    def send(self, dst, msg, key=b""):
        copies = 2 if self.spec.behavior == "resubmitter" else 1
        for _ in range(copies):
            self.sim.send(self.name, dst, msg, key=key)

    def broadcast(self, msg, key=b""):
        for v in self.vnames():
            self.send(v, msg, key)

    # -- workload --

    def start(self) -> None:
        if self.spec.behavior == "equivocator":
            self._equivocate()
        else:
            self.next_tx()

    def _budget(self, kind) -> int:
        cost = sum(self.sim.gas.cost(c) for c in commands_of(kind))
        return max(self.sim.sc.gas_budget, cost, self.sim.gas.min_cost)

    def _build(self, kind, owned=(), shared=()) -> Tx:
        owned = tuple(owned) + (self.gas,)
        tx = Tx(self.epoch, self.addr, kind, owned, (), tuple(shared), self.gas,
                self._budget(kind), self.sim.sc.tip)
        return sign_tx(tx, self.sim.attestor)

    def next_tx(self) -> None:
        if self.halted:
            return
        if self.issued >= self.spec.txs:
            self.finished = True
            return
        i = self.issued
        self.issued += 1
        kind = self.spec.kind
        if kind == "mixed":
            kind = "shared" if self.rng.random() < self.spec.shared_ratio else "owned"
        counter = self.sim.counter_ids[i % len(self.sim.counter_ids)] if self.sim.counter_ids else None
        if kind == "owned":
            ref = self.owned[i % len(self.owned)]
            cmd = MutateOwned(ref.id, {"n": i + 1}) if i % 2 else TransferOwned(ref.id, self.addr)
            tx = self._build(cmd, owned=(ref,))
        elif kind == "shared":
            tx = self._build(IncrementSharedCounter(counter), shared=((counter, 1),))
        elif kind == "read":
            tx = self._build(ReadShared(counter), shared=((counter, 1),))
        else:
            cmds = tuple(TransferOwned(r.id, self.addr) for r in self.owned)
            tx = self._build(PTB(cmds), owned=self.owned)
        rec = TxRecord(self.name, f"{self.name}-{i}", kind, self.sim.now,
                       ops=len(commands_of(tx.kind)), submit_epoch=self.epoch)
        self.history.append(rec)
        self._launch(tx, rec)

    def _launch(self, tx: Tx, rec: TxRecord, old: Optional[Driver] = None) -> None:
        d = Driver(tx, rec, self.committee)
        if old is not None:
            d.old_digests = old.old_digests + [old.digest]
            d.effsigns = old.effsigns
        self.driver = d
        dg = d.digest
        rec.digests.append(dg)
        self.sim.owner_of[dg] = self.name
        self.trace("submit", tx=dg, epoch=tx.epoch, label=rec.label, kind=rec.kind,
                   keys=tx.owned_keys())
        self.broadcast(("tx", tx), key=dg)
        self._arm_retry()

    def _arm_retry(self) -> None:
        self._retry_token += 1
        tok = self._retry_token
        self.sim.at(self.sim.now + self.sim.sc.retry_after, self._retry, tok)

    def _retry(self, tok) -> None:
        d = self.driver
        if tok != self._retry_token or d is None or self.halted:
            return
        if d.phase == SIGNING:
            for v in self.vnames():
                if v not in d.signs and v not in d.refusals:
                    self.send(v, ("tx", d.tx), key=d.digest)
        elif d.phase in (CERTIFYING, SETTLING):
            for v in self.vnames():
                if v not in d.accepts:
                    self.send(v, ("cert", d.cert), key=d.digest)
        if d.phase in (SIGNING, CERTIFYING, SETTLING):
            self._arm_retry()

    # -- message handling --

    def recv(self, src, msg) -> None:
        if self.halted:
            return
        kind = msg[0]
        if kind == "epoch":
            self._epoch_notice(src, msg[1])
            return
        if kind == "txsign" and self.equivocation and not self.equivocation.get("fresh"):
            for eq in self._eq_drivers:
                cert = eq.add_sign(msg[1], self.sim.attestor)
                if cert is not None:
                    self.sim.cert_store[cert.digest] = cert
                    self.trace("txcert", tx=cert.digest, epoch=cert.epoch,
                               keys=cert.tx.owned_keys(), signers=cert.signers)
            return
        d = self.driver
        if d is None:
            return
        if kind == "txsign":
            cert = d.add_sign(msg[1], self.sim.attestor)
            if cert is not None:
                self._on_cert(d, cert)
        elif kind == "txerr":
            self._on_tx_error(d, src, msg)
        elif kind == "certreply":
            _, dg, r = msg
            if dg != d.digest or d.cert is None:
                if isinstance(r, EffSign):
                    self._on_effsign(d, r)
                return
            if d.add_accept(src):
                self._on_final(d)
            if isinstance(r, EffSign):
                self._on_effsign(d, r)
        elif kind == "certerr":
            self._on_cert_error(d, src, msg)
        elif kind in ("effsign", "queryreply"):
            e = msg[1] if kind == "effsign" else msg[2]
            if e is not None:
                self._on_effsign(d, e)

    def _on_cert(self, d: Driver, cert: TxCert) -> None:
        d.record.cert_at = self.sim.now
        self.sim.cert_store[cert.digest] = cert
        self.trace("txcert", tx=cert.digest, epoch=cert.epoch, keys=cert.tx.owned_keys(),
                   signers=cert.signers)
        if self.spec.behavior == "crasher":
            target = self.vnames()[self.spec.target % len(self.vnames())]
            self.send(target, ("cert", cert), key=cert.digest)
            self.halted = True
            self.finished = True
            d.record.status = "abandoned"
            self.trace("client_crash", tx=cert.digest)
            return
        self.broadcast(("cert", cert), key=cert.digest)
        self._arm_retry()

    def _on_final(self, d: Driver) -> None:
        rec = d.record
        if rec.final is None:
            rec.final = self.sim.now
            rec.epoch_final = d.tx.epoch
            rec.digest = d.digest
            self.trace("final", tx=d.digest, epoch=d.tx.epoch, label=rec.label)
        d.phase = SETTLING if d.effcert is None else d.phase

    def _on_effsign(self, d: Driver, e: EffSign) -> None:
        ec = d.add_effsign(e, self.sim.attestor, self.sim.committees)
        if ec is not None:
            self._settle(d, ec)

    def _settle(self, d: Driver, ec) -> None:
        rec = d.record
        eff = ec.effects
        rec.settle = self.sim.now
        rec.epoch_settled = ec.epoch
        rec.digest = eff.tx_digest
        rec.aborted = not eff.ok
        rec.status = "settled"
        if rec.final is None:  # settled through an older incarnation's certificate
            rec.final = self.sim.now
            rec.epoch_final = ec.epoch
        d.phase = DONE
        self.trace("settle", tx=eff.tx_digest, epoch=ec.epoch, label=rec.label,
                   ok=eff.ok, kind=rec.kind, events=[p.hex() for _, p in eff.events],
                   signers=ec.signers)
        for ref in eff.written_refs():
            self.sim.creator[ref.key] = eff.tx_digest
            if ref.id == self.gas.id:
                self.gas = ref
            else:
                for i, r in enumerate(self.owned):
                    if r.id == ref.id:
                        self.owned[i] = ref
        self._retry_token += 1
        self.driver = None
        if self.equivocation is not None:
            self.equivocation["settled"] = True
            self.trace("fresh_settled", tx=eff.tx_digest, epoch=ec.epoch,
                       key=self.equivocation["key"])
            self.finished = True
            return
        self.sim.at(self.sim.now + self.spec.think, self.next_tx)

    def _on_tx_error(self, d: Driver, src, msg) -> None:
        _, dg, kind, info = msg
        if dg != d.digest or d.phase != SIGNING:
            return
        if kind == "missing":
            self._relay(src, info)
            self.sim.at(self.sim.now + 2 * self.sim.sc.delay_max, self._resend, d, src, "tx")
            return
        d.refusals[src] = kind
        if kind == "stale" and d.old_digests:
            # our earlier incarnation may have gone through; ask for its effects
            for old in d.old_digests:
                self.broadcast(("query", old), key=old)
            return
        if d.signing_hopeless():
            kinds = set(d.refusals.values())
            if kinds & {"paused", "epoch"}:
                d.phase = WAIT_EPOCH
            elif "conflict" in kinds:
                d.phase = STALLED
                d.record.status = "stalled"
                self.trace("stall", tx=d.digest, epoch=d.tx.epoch, reasons=sorted(kinds))
            elif "stale" not in kinds:
                d.phase = STALLED
                d.record.status = "failed"

    def _on_cert_error(self, d: Driver, src, msg) -> None:
        _, dg, kind, info = msg
        if dg != d.digest:
            return
        if kind == "missing":
            self._relay(src, info)
            self.sim.at(self.sim.now + 2 * self.sim.sc.delay_max, self._resend, d, src, "cert")
            return
        d.cert_refusals[src] = kind
        c = d.committee
        if d.record.final is None and \
                c.total_stake - c.stake_of(d.cert_refusals) < c.quorum_threshold():
            d.phase = WAIT_EPOCH

    def _resend(self, d: Driver, v, what) -> None:
        if self.driver is not d or self.halted:
            return
        if what == "tx" and d.phase == SIGNING:
            self.send(v, ("tx", d.tx), key=d.digest)
        elif what == "cert" and d.cert is not None and v not in d.accepts:
            self.send(v, ("cert", d.cert), key=d.digest)

    def _relay(self, target, keys) -> None:
        """Push the certificates that created the missing objects."""
        for key in keys or ():
            dg = self.sim.creator.get(key)
            cert = self.sim.cert_store.get(dg) if dg else None
            if cert is not None:
                self.send(target, ("sync", cert), key=dg)

    def _epoch_notice(self, src, epoch) -> None:
        if epoch <= self.epoch:
            return
        votes = self.epoch_votes.setdefault(epoch, set())
        votes.add(src)
        if self.committee.stake_of(votes) < self.committee.validity_threshold():
            return
        self.epoch = epoch
        self.committee = self.sim.committees[epoch]
        d = self.driver
        if d is not None and d.record.final is None and d.phase != DONE:
            d.record.renewals += 1
            self._launch(renew_tx(d.tx, epoch, self.sim.attestor), d.record, old=d)
        elif self.equivocation is not None and not self.equivocation.get("fresh"):
            self._fresh_after_equivocation()

    # -- equivocation scenario --

    def _equivocate(self) -> None:
        ref = self.owned[0]
        a = self._build(MutateOwned(ref.id, {"n": "A"}), owned=(ref,))
        b = self._build(MutateOwned(ref.id, {"n": "B"}), owned=(ref,))
        split = self.spec.split or {v: ("A" if i < len(self.vnames()) // 2 else "B")
                                    for i, v in enumerate(self.vnames())}
        self.equivocation = {"key": ref.key, "a": tx_digest(a), "b": tx_digest(b)}
        rec = TxRecord(self.name, f"{self.name}-equivocation", "owned", self.sim.now)
        self.history.append(rec)
        self.trace("equivocate", key=ref.key, a=tx_digest(a), b=tx_digest(b), epoch=self.epoch)
        for v, order in split.items():
            for ch in order:
                tx = a if ch == "A" else b
                self.sim.owner_of[tx_digest(tx)] = self.name
                self.send(v, ("tx", tx), key=tx_digest(tx))
        self.driver = None
        self._eq_drivers = (Driver(a, rec, self.committee), Driver(b, TxRecord(
            self.name, "", "owned", self.sim.now), self.committee))

    def _fresh_after_equivocation(self) -> None:
        ref = self.owned[0]
        self.equivocation["fresh"] = True
        formed = [eq.digest for eq in self._eq_drivers if eq.cert is not None]
        self.history[0].status = "stalled" if not formed else "certified"
        self.trace("stall", tx=self.equivocation["a"], epoch=self.epoch - 1,
                   certified=formed)
        tx = self._build(MutateOwned(ref.id, {"n": "C"}), owned=(ref,))
        rec = TxRecord(self.name, f"{self.name}-fresh", "owned", self.sim.now,
                       submit_epoch=self.epoch)
        self.history.append(rec)
        self._launch(tx, rec)


def run(scenario: Scenario) -> RunResult:
    return Simulation(scenario).run()
