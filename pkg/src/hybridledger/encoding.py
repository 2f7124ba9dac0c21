"""Canonical, length-prefixed binary encoding.

Every digest in the system (object ids, transaction digests, effects
digests, checkpoint chain) is SHA-256 over this encoding, so the byte
layout is part of the wire contract:

    None            0x00
    False / True    0x01 / 0x02
    int >= 0        0x03 u32-len big-endian-magnitude
    int < 0         0x09 u32-len big-endian-magnitude
    bytes           0x04 u32-len raw
    str             0x05 u32-len utf-8
    list            0x06 u32-count items...
    tuple           0x0A u32-count items...
    frozenset/set   0x0B u32-count items (sorted by their encoding)
    dict            0x07 u32-count (key, value)... sorted by encoded key
    struct          0x08 name(str) u32-count field values in declaration order

Structs are dataclasses registered with :func:`canonical`.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from typing import Any, Callable

DIGEST_SIZE = 32

_NONE, _FALSE, _TRUE, _UINT, _BYTES, _STR, _LIST, _DICT, _STRUCT, _NINT, _TUPLE, _SET = (
    0x00, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0A, 0x0B,
)

_REGISTRY: dict[str, type] = {}
_FIELDS: dict[type, tuple[str, ...]] = {}


class DecodeError(ValueError):
    pass


def canonical(cls=None, *, name: str | None = None):
    """Register a dataclass for canonical encoding under ``name``."""

    def wrap(c):
        tag = name or c.__name__
        if tag in _REGISTRY and _REGISTRY[tag] is not c:
            raise ValueError(f"duplicate canonical type name {tag!r}")
        _REGISTRY[tag] = c
        _FIELDS[c] = tuple(f.name for f in dataclasses.fields(c))
        c.__canonical_name__ = tag
        return c

    return wrap if cls is None else wrap(cls)


def _u32(n: int) -> bytes:
    return struct.pack(">I", n)


def _encode(value: Any, out: list[bytes]) -> None:
    if value is None:
        out.append(b"\x00")
    elif value is True:
        out.append(b"\x02")
    elif value is False:
        out.append(b"\x01")
    elif isinstance(value, int):
        mag = abs(value)
        raw = mag.to_bytes((mag.bit_length() + 7) // 8, "big")
        out.append(bytes([_UINT if value >= 0 else _NINT]) + _u32(len(raw)) + raw)
    elif isinstance(value, (bytes, bytearray)):
        out.append(bytes([_BYTES]) + _u32(len(value)) + bytes(value))
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(bytes([_STR]) + _u32(len(raw)) + raw)
    elif isinstance(value, list):
        out.append(bytes([_LIST]) + _u32(len(value)))
        for item in value:
            _encode(item, out)
    elif isinstance(value, tuple) and type(value) not in _FIELDS:
        out.append(bytes([_TUPLE]) + _u32(len(value)))
        for item in value:
            _encode(item, out)
    elif isinstance(value, (set, frozenset)):
        items = sorted(encode(v) for v in value)
        out.append(bytes([_SET]) + _u32(len(items)))
        out.extend(items)
    elif isinstance(value, dict):
        items = sorted((encode(k), encode(v)) for k, v in value.items())
        out.append(bytes([_DICT]) + _u32(len(items)))
        for k, v in items:
            out.append(k)
            out.append(v)
    elif type(value) in _FIELDS:
        names = _FIELDS[type(value)]
        _encode(type(value).__canonical_name__, out)
        out[-1] = bytes([_STRUCT]) + out[-1][1:]
        out.append(_u32(len(names)))
        for n in names:
            _encode(getattr(value, n), out)
    else:
        raise TypeError(f"cannot canonically encode {type(value).__name__}")


def encode(value: Any) -> bytes:
    out: list[bytes] = []
    _encode(value, out)
    return b"".join(out)


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def digest_of(value: Any) -> bytes:
    return digest(encode(value))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]


def _decode(r: _Reader) -> Any:
    tag = r.take(1)[0]
    if tag == _NONE:
        return None
    if tag == _FALSE:
        return False
    if tag == _TRUE:
        return True
    if tag in (_UINT, _NINT):
        mag = int.from_bytes(r.take(r.u32()), "big")
        return mag if tag == _UINT else -mag
    if tag == _BYTES:
        return r.take(r.u32())
    if tag == _STR:
        return r.take(r.u32()).decode("utf-8")
    if tag in (_LIST, _TUPLE, _SET):
        items = [_decode(r) for _ in range(r.u32())]
        return items if tag == _LIST else tuple(items) if tag == _TUPLE else frozenset(items)
    if tag == _DICT:
        n = r.u32()
        return {_decode(r): _decode(r) for _ in range(n)}
    if tag == _STRUCT:
        name = r.take(r.u32()).decode("utf-8")
        cls = _REGISTRY.get(name)
        if cls is None:
            raise DecodeError(f"unknown struct {name!r}")
        n = r.u32()
        if n != len(_FIELDS[cls]):
            raise DecodeError(f"field count mismatch for {name}")
        return cls(*[_decode(r) for _ in range(n)])
    raise DecodeError(f"bad tag 0x{tag:02x}")


def decode(data: bytes) -> Any:
    r = _Reader(data)
    value = _decode(r)
    if r.pos != len(data):
        raise DecodeError("trailing bytes")
    return value


def cached_digest(fn: Callable[[Any], bytes]) -> Callable[[Any], bytes]:
    """Memoise a digest function on the (frozen) instance it is called with."""
    attr = "_cached_" + fn.__name__

    def wrapper(obj):
        try:
            return obj.__dict__[attr]
        except KeyError:
            d = fn(obj)
            object.__setattr__(obj, attr, d)
            return d

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper
