import pytest

from conftest import Cluster
from hybridledger.execution import DeleteObj, IncrementSharedCounter, MutateOwned, TransferOwned
from hybridledger.messages import aggregate_tx_cert
from hybridledger.reconfig import Phase, ReconfigContract
from hybridledger.committee import Committee
from hybridledger.validator import LockConflict, ValidatorPaused, WrongEpoch


def contract(S=2, T=1, n=4):
    return ReconfigContract.for_committee(Committee.equal_stake(n), S=S, T=T)


def registered(S=2):
    k = contract(S)
    for v in ("v0", "v1", "v2", "v3"):
        k.register(v, 1)
    return k


def test_register_at_threshold_only():
    k = contract(T=2)
    k.register("v0", 2)
    k.register("v1", 1)
    assert k.new == {"v0": 2}


def test_register_after_register_phase_is_ignored():
    k = registered()
    k.ready("v0", 5)
    assert k.phase is Phase.READY
    k.register("v9", 1)
    assert "v9" not in k.new


def test_ready_before_checkpoint_s_is_ignored():
    k = registered(S=4)
    assert not k.ready("v0", 3)
    assert k.phase is Phase.REGISTER


def test_three_ready_votes_trigger_cutoff():
    k = registered()
    assert not k.ready("v0", 2)
    assert not k.ready("v1", 2)
    assert k.ready("v2", 2)
    assert k.phase is Phase.END_OF_EPOCH


def test_unregistered_ready_vote_ignored():
    k = contract()
    k.register("v0", 1)
    k.register("v1", 1)
    k.register("v2", 1)
    for _ in range(3):
        k.ready("v3", 5)
    assert k.phase is Phase.READY and k.stake == 0


def test_end_of_epoch_quorum_sets_edge():
    k = registered()
    for v in ("v0", "v1", "v2"):
        k.ready(v, 2)
    assert not k.end_of_epoch("v0", 6)
    assert not k.end_of_epoch("v0", 6)  # duplicate counted once
    assert not k.end_of_epoch("v1", 6)
    assert k.end_of_epoch("v3", 7)
    assert k.phase is Phase.HANDOVER and k.epoch_edge == 7


def test_handover_needs_one_more_checkpoint():
    k = registered()
    for v in ("v0", "v1", "v2"):
        k.ready(v, 2)
    for v in ("v0", "v1", "v2"):
        k.end_of_epoch(v, 7)
    assert k.handover(7) is None
    assert k.handover(8) == {"v0": 1, "v1": 1, "v2": 1, "v3": 1}
    assert k.phase is Phase.REGISTER
    assert k.handover(9) is None
    assert k.history == [Phase.READY, Phase.END_OF_EPOCH, Phase.HANDOVER, Phase.REGISTER]


def run_until_epoch(c, epoch, limit=60):
    for _ in range(limit):
        if c.epoch >= epoch:
            return
        c.pump()
    raise AssertionError("epoch change did not happen")


def test_validators_pause_then_move_to_next_epoch():
    c = Cluster(S=2)
    run_until_epoch(c, 1)
    assert all(v.epoch == 1 for v in c.vals.values())
    kinds = [k for k, _ in c.vals["v0"].events]
    assert kinds.index("cutoff") < kinds.index("epoch_edge") < kinds.index("handover")


def test_paused_validator_refuses_new_locks():
    c = Cluster(S=2)
    v = c.vals["v0"]
    for _ in range(30):
        c.pump()
        if v.state.paused:
            break
    assert v.state.paused
    tx = c.tx(TransferOwned(c.objs["alice.0"].id, c.bob), owned=[c.ref("alice.0")])
    with pytest.raises(ValidatorPaused):
        v.process_tx(tx)


def test_equivocated_key_is_usable_next_epoch():
    c = Cluster(S=2)
    ref = c.ref("alice.0")
    a = c.tx(MutateOwned(ref.id, {"n": "A"}), owned=[ref])
    b = c.tx(MutateOwned(ref.id, {"n": "B"}), owned=[ref])
    sa, _ = c.sign(a, on=["v0", "v1"])
    sb, _ = c.sign(b, on=["v2", "v3"])
    assert len(sa) == 2 and len(sb) == 2
    _, errors = c.sign(b, on=["v0"])
    assert isinstance(errors["v0"], LockConflict)
    run_until_epoch(c, 1)
    fresh = c.tx(MutateOwned(ref.id, {"n": "C"}), owned=[ref])
    cert = c.certify(fresh)
    out = c.execute(cert)
    assert out["v0"].effects.ok


def test_lone_execution_is_rolled_back():
    c = Cluster(S=2)
    ref = c.ref("alice.1")
    cert = c.certify(c.tx(TransferOwned(ref.id, c.bob), owned=[ref]))
    v0 = c.vals["v0"]
    v0.process_cert(cert)
    v0.outbox.clear()  # its consensus submission is lost
    assert v0.state.live(ref.id).version == 2
    run_until_epoch(c, 1)
    assert v0.state.live(ref.id).version == 1
    assert v0.state.live(ref.id).owner.addr == c.alice
    assert cert.digest not in v0.state.ct
    assert ("rollback", {"epoch": 0, "txs": [cert.digest]}) in v0.events
    assert v0.state.owned_lock[ref.key] is None


def test_deleted_shared_object_forgotten_next_epoch():
    c = Cluster(S=2)
    ctr = c.objs["counter"].id
    cert = c.certify(c.tx(DeleteObj(ctr), shared=[(ctr, 1)]))
    c.commit([cert])
    st = c.vals["v1"].state
    assert st.is_deleted(ctr)
    run_until_epoch(c, 1)
    st = c.vals["v1"].state
    assert ctr not in st.latest and ctr not in st.tombstones
    with pytest.raises(WrongEpoch):
        c.vals["v1"].process_cert(cert)


def test_next_shared_lock_seeded_from_checkpointed_version():
    c = Cluster(S=2)
    ctr = c.objs["counter"].id
    c.commit([c.certify(c.tx(IncrementSharedCounter(ctr), shared=[(ctr, 1)]))])
    run_until_epoch(c, 1)
    st = c.vals["v3"].state
    assert st.next_shared_lock[ctr] == st.latest[ctr] == 2
    cert = c.certify(c.tx(IncrementSharedCounter(ctr), shared=[(ctr, 1)], sender="bob"))
    c.commit([cert])
    assert st.live(ctr).contents["counter"] == 2
