import hashlib

import pytest
from hypothesis import given, strategies as st

from hybridledger.encoding import DecodeError, decode, encode
from hybridledger.objects import (
    AddressOwner, Obj, ObjectOwner, OwnershipCycleError, UnknownObjectError, derive_object_id,
    lamport_version, resolve_root,
)

D = bytes(range(32))


def test_derived_ids_are_distinct_per_counter():
    assert derive_object_id(D, 0) != derive_object_id(D, 1)


def test_derived_ids_are_deterministic():
    assert derive_object_id(D, 0) == derive_object_id(D, 0)


def test_derive_object_id_golden_vector():
    # oracle: sha256 over 32 zero bytes followed by the counter as 8 big-endian bytes
    oracle = hashlib.sha256(bytes(32) + (0).to_bytes(8, "big")).hexdigest()
    assert oracle == "2c34ce1df23b838c5abf2a7f6437cca3d3067ed509ff25f11df6b11b582b51eb"
    assert derive_object_id(bytes(32), 0).hex() == oracle


@pytest.mark.parametrize("versions, expected", [([3, 5], 6), ([1], 2), ([7, 7, 2], 8)])
def test_lamport_version(versions, expected):
    assert lamport_version(versions) == expected


def test_lamport_rejects_empty_and_tombstones():
    with pytest.raises(ValueError):
        lamport_version([])
    with pytest.raises(ValueError):
        lamport_version([0, 3])


@given(st.lists(st.integers(min_value=1, max_value=2**40), min_size=1))
def test_lamport_is_strictly_above_every_input(vs):
    v = lamport_version(vs)
    assert all(v > x for x in vs)
    assert v == max(vs) + 1


def _obj(oid, owner):
    return Obj(oid, 1, 1, owner, None, bytes(32))


def test_resolve_root_direct_owner():
    a = b"A" * 32
    store = {b"x": _obj(b"x", AddressOwner(a))}
    owner, chain = resolve_root(b"x", store.get)
    assert owner == AddressOwner(a)
    assert chain == [b"x"]


def test_resolve_root_through_parent():
    a = b"A" * 32
    store = {b"c": _obj(b"c", ObjectOwner(b"p")), b"p": _obj(b"p", AddressOwner(a))}
    owner, chain = resolve_root(b"c", store.get)
    assert owner == AddressOwner(a)
    assert chain == [b"c", b"p"]


def test_resolve_root_missing_parent():
    store = {b"c": _obj(b"c", ObjectOwner(b"gone"))}
    with pytest.raises(UnknownObjectError):
        resolve_root(b"c", store.get)


def test_resolve_root_detects_cycles():
    store = {b"a": _obj(b"a", ObjectOwner(b"b")), b"b": _obj(b"b", ObjectOwner(b"a"))}
    with pytest.raises(OwnershipCycleError):
        resolve_root(b"a", store.get)


def test_object_version_must_be_live():
    with pytest.raises(ValueError):
        Obj(b"x", 0, 0, AddressOwner(b""), None, bytes(32))


values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.binary(max_size=40) | st.text(max_size=20),
    lambda inner: st.lists(inner, max_size=4) | st.tuples(inner, inner)
    | st.dictionaries(st.text(max_size=5), inner, max_size=4),
    max_leaves=20,
)


@given(values)
def test_encoding_round_trips(v):
    assert decode(encode(v)) == v


@given(st.dictionaries(st.text(max_size=6), st.integers(), max_size=6))
def test_dict_encoding_ignores_insertion_order(d):
    rev = dict(reversed(list(d.items())))
    assert encode(d) == encode(rev)


def test_struct_round_trip_and_truncation():
    o = _obj(b"x" * 32, AddressOwner(b"a" * 32))
    raw = encode(o)
    assert decode(raw) == o
    with pytest.raises(DecodeError):
        decode(raw[:-1])
