"""Attestation scheme used for validator and user signatures.

The default scheme is a deterministic keyed MAC. It exposes the same
surface a real signature scheme would (``sign`` / ``verify`` keyed by a
signer identity) so it can be swapped without touching protocol code.
Keys are derived from signer names, which keeps simulations reproducible
but provides no security against a party that knows the derivation.
"""

from __future__ import annotations

import hashlib
import hmac
from typing import Protocol

from .objects import Address, address_of


class Attestor(Protocol):
    def sign(self, signer: str | bytes, message: bytes) -> bytes: ...

    def verify(self, signer: str | bytes, message: bytes, sig: bytes) -> bool: ...


def _secret(signer: str | bytes) -> bytes:
    raw = signer.encode() if isinstance(signer, str) else signer
    return hashlib.sha256(b"mac-secret:" + raw).digest()


class MacAttestor:
    """HMAC-SHA256 stand-in for a signature scheme."""

    def __init__(self):
        self._cache: dict[str | bytes, bytes] = {}
        self._users: dict[Address, bytes] = {}

    def _key(self, signer: str | bytes) -> bytes:
        k = self._cache.get(signer)
        if k is None:
            k = self._users.get(signer) if isinstance(signer, bytes) else None
            if k is None:
                k = _secret(signer)
            self._cache[signer] = k
        return k

    def sign(self, signer: str | bytes, message: bytes) -> bytes:
        return hmac.new(self._key(signer), message, hashlib.sha256).digest()

    def verify(self, signer: str | bytes, message: bytes, sig: bytes) -> bool:
        return hmac.compare_digest(self.sign(signer, message), sig)

    def new_user(self, name: str) -> Address:
        """Create a user account; returns its address."""
        secret = _secret("user:" + name)
        public = hashlib.sha256(b"pub:" + secret).digest()
        addr = address_of(public)
        self._users[addr] = secret
        self._cache.pop(addr, None)
        return addr


DEFAULT_ATTESTOR = MacAttestor()
