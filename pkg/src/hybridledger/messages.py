"""Transactions, certificates, effects and their digests."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .committee import Committee, EpochID, ValidatorID
from .crypto import Attestor
from .encoding import canonical, digest_of, encode
from .objects import Address, ObjID, ObjKey, ObjRef, TxDigest, Version


class CertificateError(ValueError):
    pass


class InsufficientStakeError(CertificateError):
    pass


class MismatchedSignatureError(CertificateError):
    pass


class InvalidSignatureError(CertificateError):
    pass


@canonical
@dataclass(frozen=True)
class Tx:
    epoch: EpochID
    sender: Address
    kind: Any
    owned_inputs: tuple = ()
    readonly_inputs: tuple = ()
    shared_inputs: tuple = ()  # (ObjID, initial version) pairs
    gas_ref: ObjRef | None = None
    gas_budget: int = 0
    tip: int = 0
    user_sig: bytes = b""

    def digest(self) -> TxDigest:
        return tx_digest(self)

    def owned_keys(self) -> list[ObjKey]:
        return [r.key for r in self.owned_inputs]

    def shared_ids(self) -> list[ObjID]:
        return [oid for oid, _ in self.shared_inputs]

    def input_ids(self) -> list[ObjID]:
        return ([r.id for r in self.owned_inputs] + list(self.readonly_inputs)
                + self.shared_ids())

    def shape_error(self) -> str | None:
        """Structural problems that make the transaction unusable."""
        if self.gas_ref is None:
            return "missing gas object"
        if self.gas_ref not in self.owned_inputs:
            return "gas object must be an owned input"
        ids = self.input_ids()
        if len(ids) != len(set(ids)):
            return "duplicate input object"
        if self.gas_budget < 0 or self.tip < 0:
            return "negative gas parameters"
        return None

    def signing_bytes(self) -> bytes:
        return b"tx:" + tx_digest(self)


def tx_digest(tx: Tx) -> TxDigest:
    """Digest of the transaction content; the user signature is excluded."""
    d = tx.__dict__.get("_digest")
    if d is None:
        d = digest_of(("Tx", tx.epoch, tx.sender, tx.kind, tuple(tx.owned_inputs),
                       tuple(tx.readonly_inputs), tuple(tuple(s) for s in tx.shared_inputs),
                       tx.gas_ref, tx.gas_budget, tx.tip))
        object.__setattr__(tx, "_digest", d)
    return d


def sign_tx(tx: Tx, attestor: Attestor) -> Tx:
    from dataclasses import replace
    return replace(tx, user_sig=attestor.sign(tx.sender, tx.signing_bytes()))


def _txsign_message(digest: TxDigest, epoch: EpochID) -> bytes:
    return encode(("txsign", digest, epoch))


def _effsign_message(effects_digest: bytes, epoch: EpochID) -> bytes:
    return encode(("effsign", effects_digest, epoch))


@canonical
@dataclass(frozen=True)
class TxSign:
    tx_digest: TxDigest
    validator: ValidatorID
    epoch: EpochID
    sig: bytes

    @classmethod
    def create(cls, tx: Tx, validator: ValidatorID, attestor: Attestor) -> "TxSign":
        d = tx_digest(tx)
        return cls(d, validator, tx.epoch, attestor.sign(validator, _txsign_message(d, tx.epoch)))

    def verify(self, attestor: Attestor) -> bool:
        return attestor.verify(self.validator, _txsign_message(self.tx_digest, self.epoch), self.sig)


@canonical
@dataclass(frozen=True, eq=False)
class TxCert:
    tx: Tx
    signers: frozenset
    agg_sig: tuple  # ((validator, sig), ...) sorted by validator

    @property
    def digest(self) -> TxDigest:
        return tx_digest(self.tx)

    @property
    def epoch(self) -> EpochID:
        return self.tx.epoch

    # Different signer sets over one transaction are the same certificate.
    def __eq__(self, other):
        if not isinstance(other, TxCert):
            return NotImplemented
        return self.digest == other.digest

    def __hash__(self):
        return hash(self.digest)


@canonical
@dataclass(frozen=True)
class Success:
    pass


@canonical
@dataclass(frozen=True)
class Abort:
    code: int
    location: str = ""


@canonical
@dataclass(frozen=True)
class Effects:
    tx_digest: TxDigest
    status: Any
    gas_used: int = 0
    created: tuple = ()
    mutated: tuple = ()
    unwrapped: tuple = ()
    wrapped: tuple = ()   # ObjKey
    deleted: tuple = ()   # ObjKey
    events: tuple = ()    # (type name, payload bytes)
    dependencies: tuple = ()

    @property
    def ok(self) -> bool:
        return isinstance(self.status, Success)

    def digest(self) -> bytes:
        d = self.__dict__.get("_digest")
        if d is None:
            d = digest_of(self)
            object.__setattr__(self, "_digest", d)
        return d

    def written_refs(self) -> list[ObjRef]:
        return list(self.created) + list(self.mutated) + list(self.unwrapped)


@canonical
@dataclass(frozen=True)
class EffSign:
    effects: Effects
    validator: ValidatorID
    epoch: EpochID
    sig: bytes

    @classmethod
    def create(cls, effects: Effects, validator: ValidatorID, epoch: EpochID,
               attestor: Attestor) -> "EffSign":
        sig = attestor.sign(validator, _effsign_message(effects.digest(), epoch))
        return cls(effects, validator, epoch, sig)

    def verify(self, attestor: Attestor) -> bool:
        return attestor.verify(self.validator, _effsign_message(self.effects.digest(), self.epoch),
                               self.sig)


@canonical
@dataclass(frozen=True, eq=False)
class EffCert:
    effects: Effects
    epoch: EpochID
    signers: frozenset
    agg_sig: tuple

    @property
    def tx_digest(self) -> TxDigest:
        return self.effects.tx_digest

    def __eq__(self, other):
        if not isinstance(other, EffCert):
            return NotImplemented
        return self.effects.digest() == other.effects.digest() and self.epoch == other.epoch

    def __hash__(self):
        return hash(self.effects.digest())


def _check_quorum(committee: Committee, signers: set) -> None:
    have = committee.stake_of(signers)
    need = committee.quorum_threshold()
    if have < need:
        raise InsufficientStakeError(f"stake {have} below quorum {need}")


def aggregate_tx_cert(tx: Tx, signs: Sequence[TxSign], committee: Committee,
                      attestor: Attestor) -> TxCert:
    d = tx_digest(tx)
    if tx.epoch != committee.epoch:
        raise MismatchedSignatureError("transaction epoch differs from committee epoch")
    sigs: dict[ValidatorID, bytes] = {}
    for s in signs:
        if s.tx_digest != d or s.epoch != tx.epoch:
            raise MismatchedSignatureError("signature over a different transaction or epoch")
        if s.validator not in committee:
            raise InvalidSignatureError(f"{s.validator} is not a committee member")
        if not s.verify(attestor):
            raise InvalidSignatureError(f"bad signature from {s.validator}")
        sigs.setdefault(s.validator, s.sig)
    _check_quorum(committee, set(sigs))
    return TxCert(tx, frozenset(sigs), tuple(sorted(sigs.items())))


def verify_tx_cert(cert: TxCert, committee: Committee, attestor: Attestor) -> bool:
    if cert.epoch != committee.epoch:
        return False
    msg = _txsign_message(cert.digest, cert.epoch)
    valid = {v for v, sig in cert.agg_sig
             if v in committee and v in cert.signers and attestor.verify(v, msg, sig)}
    return committee.has_quorum(valid)


def aggregate_eff_cert(effects: Effects, signs: Sequence[EffSign], committee: Committee,
                       attestor: Attestor) -> EffCert:
    sigs: dict[ValidatorID, bytes] = {}
    want = effects.digest()
    for s in signs:
        if s.effects.digest() != want:
            raise MismatchedSignatureError("signatures over different effects")
        if s.epoch != committee.epoch:
            raise MismatchedSignatureError("effects signature from another epoch")
        if s.validator not in committee:
            raise InvalidSignatureError(f"{s.validator} is not a committee member")
        if not s.verify(attestor):
            raise InvalidSignatureError(f"bad signature from {s.validator}")
        sigs.setdefault(s.validator, s.sig)
    _check_quorum(committee, set(sigs))
    return EffCert(effects, committee.epoch, frozenset(sigs), tuple(sorted(sigs.items())))


def verify_eff_cert(cert: EffCert, committee: Committee, attestor: Attestor) -> bool:
    if cert.epoch != committee.epoch:
        return False
    msg = _effsign_message(cert.effects.digest(), cert.epoch)
    valid = {v for v, sig in cert.agg_sig
             if v in committee and v in cert.signers and attestor.verify(v, msg, sig)}
    return committee.has_quorum(valid)


def tally(signs: Iterable, committee: Committee) -> int:
    return committee.stake_of({s.validator for s in signs})
