import pytest

from conftest import Cluster
from hybridledger.execution import AbortWith, DeleteObj, IncrementSharedCounter, ReadShared, TransferOwned
from hybridledger.messages import EffSign, TxSign
from hybridledger.objects import ObjKey, TOMBSTONE
from hybridledger.store import SimulatedCrash
from hybridledger.validator import (
    Forwarded, InitialVersionMismatch, LockConflict, MissingObjects, NotScheduled, StaleObject,
    WrongEpoch,
)


def transfer(c, name="alice.0", to=None, **kw):
    return c.tx(TransferOwned(c.objs[name].id, to or c.bob), owned=[c.ref(name)], **kw)


def test_fresh_tx_gets_signed(cluster):
    tx = transfer(cluster)
    s = cluster.vals["v0"].process_tx(tx)
    assert isinstance(s, TxSign) and s.verify(cluster.att)


def test_conflicting_tx_on_locked_key(cluster):
    v = cluster.vals["v0"]
    v.process_tx(transfer(cluster))
    with pytest.raises(LockConflict):
        v.process_tx(transfer(cluster, to=cluster.alice))


def test_same_tx_resubmitted_returns_same_sign(cluster):
    v = cluster.vals["v0"]
    tx = transfer(cluster)
    assert v.process_tx(tx) == v.process_tx(tx)


def test_wrong_initial_version_for_shared_input(cluster):
    ctr = cluster.objs["counter"].id
    tx = cluster.tx(IncrementSharedCounter(ctr), shared=[(ctr, 2)])
    with pytest.raises(InitialVersionMismatch):
        cluster.vals["v0"].process_tx(tx)


def test_wrong_epoch(cluster):
    with pytest.raises(WrongEpoch):
        cluster.vals["v0"].process_tx(transfer(cluster, epoch=3))


def test_owned_cert_executes_directly(cluster):
    cert = cluster.certify(transfer(cluster))
    out = cluster.execute(cert)
    assert all(isinstance(r, EffSign) for r in out.values())
    assert len({r.effects.digest() for r in out.values()}) == 1
    assert cluster.vals["v0"].state.shared_lock == {}


def test_shared_cert_is_forwarded_before_sequencing(cluster):
    ctr = cluster.objs["counter"].id
    cert = cluster.certify(cluster.tx(IncrementSharedCounter(ctr), shared=[(ctr, 1)]))
    r = cluster.vals["v0"].process_cert(cert)
    assert isinstance(r, Forwarded)
    assert ("consensus", cert, 0) in cluster.vals["v0"].outbox


def test_replayed_cert_returns_identical_effsign(cluster):
    cert = cluster.certify(transfer(cluster))
    v = cluster.vals["v1"]
    assert v.process_cert(cert) == v.process_cert(cert)


def test_cert_for_unknown_object_reports_missing(cluster):
    c = cluster
    first = c.certify(transfer(c, to=c.alice), on=["v0", "v1", "v2"])
    c.execute(first, on=["v0", "v1", "v2"])
    second = c.certify(transfer(c, to=c.bob), on=["v0", "v1", "v2"])
    with pytest.raises(MissingObjects) as e:
        c.vals["v3"].process_cert(second)
    assert ObjKey(c.objs["alice.0"].id, 2) in e.value.keys


def _incr(c, sender="alice"):
    ctr = c.objs["counter"].id
    return c.certify(c.tx(IncrementSharedCounter(ctr), shared=[(ctr, 1)], sender=sender))


def test_first_shared_lock_on_fresh_object(cluster):
    c = cluster
    cert = _incr(c)
    c.commit([cert])
    st = c.vals["v0"].state
    ctr = c.objs["counter"].id
    # hand trace: lock = initial version 1; v_max = max(gas 1, lock 1) = 1; next = 2
    assert st.shared_lock[(cert.digest, ctr)] == 1
    assert st.next_shared_lock[ctr] == 2


def test_second_shared_lock_follows_first(cluster):
    c = cluster
    a = _incr(c, "alice")
    bob_tx = c.tx(TransferOwned(c.objs["bob.0"].id, c.alice), owned=[c.ref("bob.0")], sender="bob")
    c.execute(c.certify(bob_tx))  # bob's gas now at version 2
    b = _incr(c, "bob")
    c.commit([a, b])
    st = c.vals["v2"].state
    ctr = c.objs["counter"].id
    assert st.shared_lock[(a.digest, ctr)] == 1
    assert st.shared_lock[(b.digest, ctr)] == 2
    # v_max for b = max(bob gas 2, lock 2) = 2
    assert st.next_shared_lock[ctr] == 3
    assert st.live(ctr).contents["counter"] == 2


def test_replayed_commit_changes_nothing(cluster):
    c = cluster
    cert = _incr(c)
    commit = c.commit([cert])
    v = c.vals["v0"]
    before = (dict(v.state.shared_lock), dict(v.state.next_shared_lock), dict(v.state.latest))
    v.schedule_commit(commit)
    v.assign_shared_locks(cert)
    assert before == (dict(v.state.shared_lock), dict(v.state.next_shared_lock),
                      dict(v.state.latest))


def test_successful_transfer_moves_lock(cluster):
    c = cluster
    cert = c.certify(transfer(c))
    c.execute(cert)
    st = c.vals["v0"].state
    oid = c.objs["alice.0"].id
    assert ObjKey(oid, 1) not in st.owned_lock
    assert st.owned_lock[ObjKey(oid, 2)] is None


def test_delete_leaves_tombstone(cluster):
    c = cluster
    oid = c.objs["alice.1"].id
    old = c.ref("alice.1")
    c.execute(c.certify(c.tx(DeleteObj(oid), owned=[old])))
    st = c.vals["v0"].state
    assert st.latest[oid] == TOMBSTONE
    with pytest.raises(StaleObject):
        c.vals["v0"].process_tx(c.tx(TransferOwned(oid, c.bob), owned=[old]))


def test_aborted_cert_unlocks_inputs_at_same_version(cluster):
    c = cluster
    ref = c.ref("alice.2")
    cert = c.certify(c.tx(AbortWith(3), owned=[ref]))
    out = c.execute(cert)
    assert not out["v0"].effects.ok
    st = c.vals["v0"].state
    assert st.owned_lock[ref.key] is None
    assert st.latest[ref.id] == ref.version
    # the same version can be spent right away
    c.execute(c.certify(c.tx(TransferOwned(ref.id, c.bob), owned=[ref])))
    assert c.vals["v0"].state.live(ref.id).owner.addr == c.bob


def test_reads_in_a_commit_see_pre_commit_version():
    c = Cluster()
    ctr = c.objs["counter"].id
    for _ in range(4):
        c.pump()
        cert = _incr(c, "alice")
        c.commit([cert])
    assert c.vals["v0"].state.latest[ctr] == 5
    r1 = c.certify(c.tx(ReadShared(ctr), shared=[(ctr, 1)], sender="bob"))
    w = _incr(c, "alice")
    r2 = c.certify(c.tx(ReadShared(ctr), shared=[(ctr, 1)], sender="carol"))
    c.commit([r1, w, r2])
    st = c.vals["v0"].state
    assert st.shared_lock[(r1.digest, ctr)] == 5
    assert st.shared_lock[(r2.digest, ctr)] == 5
    assert st.shared_lock[(w.digest, ctr)] == 5
    assert st.latest[ctr] == 6
    for d in (r1.digest, r2.digest, w.digest):
        assert st.ct[d][1].effects.ok


def test_owned_only_commit_writes_no_shared_locks(cluster):
    c = cluster
    c.commit([c.certify(transfer(c))])
    assert c.vals["v0"].state.shared_lock == {}


def test_duplicate_cert_across_commits_runs_once(cluster):
    c = cluster
    cert = _incr(c)
    c.commit([cert])
    c.commit([cert])
    st = c.vals["v0"].state
    assert st.live(c.objs["counter"].id).contents["counter"] == 1
    assert st.exec_order.count(cert.digest) == 1


def test_unsequenced_validator_forwards(cluster):
    c = cluster
    a = _incr(c, "alice")
    c.commit([a], on=["v1"])
    assert isinstance(c.vals["v0"].process_cert(a), Forwarded)


def test_not_scheduled_until_predecessor_runs(cluster):
    c = cluster
    # v3 misses alice's transfer, so it cannot run alice's increment yet
    c.execute(c.certify(transfer(c), on=["v0", "v1", "v2"]), on=["v0", "v1", "v2"])
    a = _incr_on(c, "alice", ["v0", "v1", "v2"])
    b = _incr(c, "bob")
    c.commit([a, b])
    with pytest.raises(NotScheduled):
        c.vals["v3"].process_cert(b)
    assert c.vals["v0"].state.live(c.objs["counter"].id).contents["counter"] == 2


def _incr_on(c, sender, on):
    ctr = c.objs["counter"].id
    return c.certify(c.tx(IncrementSharedCounter(ctr), shared=[(ctr, 1)], sender=sender), on=on)


@pytest.mark.parametrize("stage", range(1, 12))
def test_crash_during_persist_is_all_or_nothing(stage):
    c = Cluster()
    cert = c.certify(transfer(c))
    v = c.vals["v0"]
    snapshot = (dict(v.state.latest), dict(v.state.owned_lock), dict(v.state.ct))

    def hook(n):
        if n == stage:
            raise SimulatedCrash(n)

    v.state.crash_hook = hook
    try:
        v.process_cert(cert)
        crashed = False
    except SimulatedCrash:
        crashed = True
    v.state.crash_hook = None
    if crashed:
        assert (dict(v.state.latest), dict(v.state.owned_lock), dict(v.state.ct)) == snapshot
    r = v.process_cert(cert)  # recovery: re-running yields the full effect
    assert r.effects.ok and cert.digest in v.state.ct
    assert v.state.live(c.objs["alice.0"].id).version == 2
