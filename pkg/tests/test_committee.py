import pytest
from hypothesis import given, strategies as st

from hybridledger.committee import Committee


def test_quorum_thresholds():
    assert Committee.equal_stake(4).quorum_threshold() == 3
    assert Committee.equal_stake(10).quorum_threshold() == 7
    assert Committee(0, {"a": 60, "b": 40}).quorum_threshold() == 67


def test_validity_thresholds():
    assert Committee.equal_stake(4).validity_threshold() == 2
    assert Committee(0, {"a": 100}).validity_threshold() == 34
    assert Committee(0, {"a": 1}).validity_threshold() == 1


def test_empty_committee_has_no_threshold():
    with pytest.raises(ValueError):
        Committee(0, {}).quorum_threshold()


def test_negative_stake_rejected():
    with pytest.raises(ValueError):
        Committee(0, {"a": -1})


def test_duplicates_do_not_add_stake():
    c = Committee.equal_stake(4)
    assert not c.has_quorum(["v0", "v0", "v1"])


@given(st.lists(st.integers(min_value=1, max_value=50), min_size=1, max_size=10), st.data())
def test_any_two_quorums_share_a_validity_set(stakes, data):
    c = Committee(0, {f"v{i}": s for i, s in enumerate(stakes)})
    ids = c.ids()
    a = data.draw(st.sets(st.sampled_from(ids)))
    b = data.draw(st.sets(st.sampled_from(ids)))
    if c.has_quorum(a) and c.has_quorum(b):
        # the overlap carries more stake than any f-sized faulty set
        assert c.stake_of(a & b) > c.total_stake - c.quorum_threshold()
