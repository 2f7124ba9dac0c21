import pytest

from conftest import Cluster
from hybridledger.consensus import EpochClosed, RejectedSubmission, Sequencer, commit_stream
from hybridledger.committee import Committee
from hybridledger.execution import TransferOwned
from hybridledger.messages import TxCert


def _cert(c):
    return c.certify(c.tx(TransferOwned(c.objs["alice.0"].id, c.bob), owned=[c.ref("alice.0")]))


def _seq(c):
    s = Sequencer(c.att)
    s.add_committee(c.committee)
    return s


def test_single_submission_is_sequenced():
    c = Cluster()
    s = _seq(c)
    cert = _cert(c)
    s.submit(cert)
    assert s.cut().certs == (cert,)


def test_duplicates_are_sequenced_once():
    c = Cluster()
    s = _seq(c)
    cert = _cert(c)
    s.submit(cert)
    s.submit(cert)
    first = s.cut()
    s.submit(cert)
    assert first.certs == (cert,) and s.cut().certs == ()


def test_invalid_certificate_rejected():
    c = Cluster()
    s = _seq(c)
    cert = _cert(c)
    bad = TxCert(cert.tx, frozenset(sorted(cert.signers)[:2]), cert.agg_sig)
    with pytest.raises(RejectedSubmission):
        s.submit(bad)


def test_stream_is_one_log_and_resumable():
    c = Cluster()
    s = _seq(c)
    for _ in range(7):
        s.cut()
    assert [x.seq for x in commit_stream(s, 0)] == list(range(7))
    # a validator that was down during 3..5 picks up from 3
    assert [x.seq for x in s.commits(0, 3)] == [3, 4, 5, 6]


def test_empty_traffic_still_produces_commits():
    s = Sequencer(Cluster().att)
    assert [s.cut().seq for _ in range(3)] == [0, 1, 2]


def test_closed_epoch_truncates_log_and_refuses_items():
    c = Cluster()
    s = _seq(c)
    for _ in range(5):
        s.cut()
    s.close_epoch(0, 2, Committee.equal_stake(4, epoch=1))
    assert len(s.commits(0)) == 3
    with pytest.raises(EpochClosed):
        s.submit("vote", 0)
    assert s.cut().epoch == 1
