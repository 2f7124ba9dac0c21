import pytest

from hybridledger.committee import Committee
from hybridledger.consensus import Commit
from hybridledger.crypto import MacAttestor
from hybridledger.execution import GasSchedule
from hybridledger.messages import Tx, aggregate_tx_cert, sign_tx
from hybridledger.objects import GENESIS_DIGEST, AddressOwner, Obj, SharedMutable
from hybridledger.encoding import digest
from hybridledger.validator import Forwarded, ProtocolError, Validator


def gid(*parts) -> bytes:
    return digest(":".join(map(str, parts)).encode())


class Cluster:
    """In-process validators driven by direct calls, no network."""

    def __init__(self, n=4, behaviors=None, gas=None, S=8, T=1, coin=10**9):
        self.att = MacAttestor()
        self.genesis_committee = Committee.equal_stake(n)
        self.gas = gas or GasSchedule()
        self.users = {who: self.att.new_user(who) for who in ("alice", "bob", "carol")}
        self.alice, self.bob = self.users["alice"], self.users["bob"]
        self.objs = {}
        for who, addr in self.users.items():
            self.objs[f"{who}.gas"] = Obj(gid(who, "gas"), 1, 1, AddressOwner(addr),
                                          {"coin": coin}, GENESIS_DIGEST)
            for i in range(3):
                self.objs[f"{who}.{i}"] = Obj(gid(who, i), 1, 1, AddressOwner(addr),
                                              {"n": i}, GENESIS_DIGEST)
        self.objs["counter"] = Obj(gid("counter"), 1, 1, SharedMutable(), {"counter": 0},
                                   GENESIS_DIGEST)
        behaviors = behaviors or {}
        self.vals = {
            name: Validator(name, self.genesis_committee, self.objs.values(), attestor=self.att,
                            gas=self.gas, S=S, T=T, behavior=behaviors.get(name, "honest"))
            for name in self.genesis_committee.ids()
        }
        self.seq = {}

    @property
    def committee(self):
        return next(iter(self.vals.values())).committee

    @property
    def epoch(self):
        return next(iter(self.vals.values())).epoch

    def ref(self, name, at=None):
        v = self.vals[at or "v0"]
        oid = self.objs[name].id
        return v.state.live(oid).ref()

    def tx(self, kind, owned=(), shared=(), readonly=(), sender="alice", budget=1000, tip=0,
           epoch=None, gas=None):
        addr = self.users[sender]
        gas_ref = gas or self.ref(f"{sender}.gas")
        owned = tuple(owned) + (gas_ref,)
        tx = Tx(self.epoch if epoch is None else epoch, addr, kind, owned, tuple(readonly),
                tuple(shared), gas_ref, budget, tip)
        return sign_tx(tx, self.att)

    def sign(self, tx, on=None):
        signs, errors = [], {}
        for name in on or self.committee.ids():
            try:
                signs.append(self.vals[name].process_tx(tx))
            except ProtocolError as e:
                errors[name] = e
        return signs, errors

    def certify(self, tx, on=None):
        signs, errors = self.sign(tx, on)
        assert not errors, errors
        return aggregate_tx_cert(tx, signs, self.committee, self.att)

    def execute(self, cert, on=None):
        out = {}
        for name in on or self.committee.ids():
            out[name] = self.vals[name].process_cert(cert)
        return out

    def commit(self, certs=(), system=(), on=None):
        """Hand the next commit to every validator (or those in ``on``)."""
        epoch = self.epoch
        seq = self.seq.get(epoch, 0)
        self.seq[epoch] = seq + 1
        c = Commit(epoch, seq, tuple(certs), tuple(system))
        for name in on or self.committee.ids():
            self.vals[name].schedule_commit(c)
        return c

    def pump(self, rounds=1):
        """Sequence everything validators submitted, like a lossless sequencer."""
        for _ in range(rounds):
            items = []
            for v in self.vals.values():
                items.extend(x[1] for x in v.outbox if x[0] == "consensus")
                v.outbox.clear()
            certs, system, seen = [], [], set()
            for it in items:
                if hasattr(it, "tx"):
                    if it.digest not in seen:
                        seen.add(it.digest)
                        certs.append(it)
                else:
                    system.append(it)
            before = self.epoch
            self.commit(certs, system)
            if self.epoch != before:
                for v in self.vals.values():
                    v.outbox[:] = [x for x in v.outbox if x[0] != "consensus" or x[2] == self.epoch]


@pytest.fixture
def cluster():
    return Cluster()


__all__ = ["Cluster", "gid", "Forwarded"]


# -- acceptance reporting -----------------------------------------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")
    config._criteria = {}


def pytest_runtest_logreport(report):
    item_marks = getattr(report, "criterion", None)
    if item_marks is None:
        return
    n, title = item_marks
    results = _config._criteria
    ok = report.passed if report.when == "call" else not report.failed
    prev = results.get(n, (title, True))
    results[n] = (title, prev[1] and ok)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = tuple(mark.args)


def pytest_sessionstart(session):
    global _config
    _config = session.config


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        title, ok = results[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}")
