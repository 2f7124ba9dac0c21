"""Client/gateway logic: certificate assembly, settlement, renewal, relayer sync."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .committee import Committee
from .crypto import Attestor
from .execution import PTB, _mutated_refs, commands_of
from .messages import (
    CertificateError, EffCert, EffSign, Tx, TxCert, TxSign, aggregate_eff_cert,
    aggregate_tx_cert, sign_tx, tx_digest,
)
from .objects import ObjID, ObjKey, ObjRef, TxDigest


class SyncError(LookupError):
    pass


class PTBError(ValueError):
    pass


def make_ptb(commands: Sequence, *, epoch: int, sender: bytes, owned_inputs: Sequence[ObjRef],
             gas_ref: ObjRef, gas_budget: int, tip: int = 0, shared_inputs=(),
             readonly_inputs=(), attestor: Attestor | None = None) -> Tx:
    """Bundle commands into one transaction with a single gas object."""
    cmds = tuple(commands)
    if not cmds:
        raise PTBError("a PTB needs at least one command")
    if any(isinstance(c, PTB) for c in cmds):
        raise PTBError("nested PTBs are not allowed")
    used: set[ObjID] = set()
    for c in cmds:
        for oid in _mutated_refs(c):
            if oid in used:
                raise PTBError("object used by more than one command")
            used.add(oid)
    ids = [r.id for r in owned_inputs] + [i for i, _ in shared_inputs] + list(readonly_inputs)
    if len(ids) != len(set(ids)):
        raise PTBError("duplicate input object")
    owned = tuple(owned_inputs)
    if gas_ref not in owned:
        owned = owned + (gas_ref,)
    tx = Tx(epoch, sender, PTB(cmds), owned, tuple(readonly_inputs), tuple(shared_inputs),
            gas_ref, gas_budget, tip)
    return sign_tx(tx, attestor) if attestor is not None else tx


def renew_tx(tx: Tx, epoch: int, attestor: Attestor) -> Tx:
    """Same intent, re-issued for ``epoch``."""
    return sign_tx(dataclasses.replace(tx, epoch=epoch, user_sig=b""), attestor)


def renew_certificate(tx: Tx, epoch: int, validators: Iterable, committee: Committee,
                      attestor: Attestor) -> TxCert:
    """Re-sign ``tx`` for ``epoch`` and assemble a fresh certificate.

    ``validators`` expose ``process_tx``; errors from individual validators
    are skipped, and a missing quorum surfaces as the aggregation error.
    """
    new = renew_tx(tx, epoch, attestor)
    signs = []
    for v in validators:
        try:
            signs.append(v.process_tx(new))
        except Exception:  # conflict, stale input, paused: not a vote
            continue
    return aggregate_tx_cert(new, signs, committee, attestor)


def sync_validator(submit: Callable[[TxCert], object], cert: TxCert, local_ct: dict,
                   creator_of: Callable[[ObjKey], Optional[TxDigest]]) -> list[TxCert]:
    """Bring a lagging validator up to date so it can execute ``cert``.

    ``submit(cert)`` hands a certificate to the target and returns its
    reply, raising an error with a ``keys`` attribute when inputs are
    missing. ``creator_of(key)`` names the certificate that produced an
    object version. Returns the certificates submitted, in order.
    """
    from .validator import MissingObjects

    sent: list[TxCert] = []
    stack = [cert]
    while stack:
        top = stack[-1]
        try:
            submit(top)
        except MissingObjects as e:
            deps: dict[TxDigest, TxCert] = {}
            for key in e.keys:
                d = creator_of(key)
                if d is None or d not in local_ct:
                    raise SyncError(f"history gap at {key.id.hex()[:12]}@{key.version}")
                deps.setdefault(d, local_ct[d])
            if not deps:
                raise
            for dep in deps.values():
                if dep in stack:
                    raise SyncError("dependency loop while syncing")
                stack.append(dep)
            continue
        sent.append(stack.pop())
    return sent


# -- transaction driver -----------------------------------------------------

SIGNING, CERTIFYING, SETTLING, DONE, STALLED, WAIT_EPOCH = (
    "signing", "certifying", "settling", "done", "stalled", "wait-epoch")


@dataclass
class TxRecord:
    """Latency bookkeeping for one logical transaction (across renewals)."""
    client: str
    label: str
    kind: str
    submit: float
    ops: int = 1
    cert_at: Optional[float] = None
    final: Optional[float] = None
    settle: Optional[float] = None
    epoch_final: Optional[int] = None
    epoch_settled: Optional[int] = None
    digest: Optional[bytes] = None
    digests: list = field(default_factory=list)
    status: str = "pending"
    aborted: bool = False
    renewals: int = 0
    submit_epoch: int = 0


@dataclass
class Driver:
    tx: Tx
    record: TxRecord
    committee: Committee
    phase: str = SIGNING
    signs: dict = field(default_factory=dict)
    refusals: dict = field(default_factory=dict)
    cert: Optional[TxCert] = None
    accepts: set = field(default_factory=set)
    cert_refusals: dict = field(default_factory=dict)
    effsigns: dict = field(default_factory=dict)  # effects digest -> {validator: EffSign}
    effcert: Optional[EffCert] = None
    old_digests: list = field(default_factory=list)

    @property
    def digest(self) -> bytes:
        return tx_digest(self.tx)

    def add_sign(self, s: TxSign, attestor: Attestor) -> Optional[TxCert]:
        if self.phase != SIGNING or s.tx_digest != self.digest or s.validator not in self.committee:
            return None
        if not s.verify(attestor):
            return None
        self.signs[s.validator] = s
        if self.committee.has_quorum(self.signs):
            try:
                self.cert = aggregate_tx_cert(self.tx, list(self.signs.values()),
                                              self.committee, attestor)
            except CertificateError:
                return None
            self.phase = CERTIFYING
            return self.cert
        return None

    def signing_hopeless(self) -> bool:
        """No quorum of signatures can form any more."""
        c = self.committee
        refused = c.stake_of(self.refusals)
        return c.total_stake - refused < c.quorum_threshold()

    def add_accept(self, validator: str) -> bool:
        """Returns True at the moment finality is reached."""
        if validator not in self.committee:
            return False
        before = self.committee.has_quorum(self.accepts)
        self.accepts.add(validator)
        return not before and self.committee.has_quorum(self.accepts)

    def add_effsign(self, e: EffSign, attestor: Attestor, committees: dict) -> Optional[EffCert]:
        if self.effcert is not None:
            return None
        if e.effects.tx_digest not in [self.digest] + self.old_digests:
            return None
        committee = committees.get(e.epoch)
        if committee is None or e.validator not in committee or not e.verify(attestor):
            return None
        group = self.effsigns.setdefault((e.epoch, e.effects.digest()), {})
        group[e.validator] = e
        if committee.has_quorum(group):
            try:
                self.effcert = aggregate_eff_cert(e.effects, list(group.values()),
                                                  committee, attestor)
            except CertificateError:
                return None
            return self.effcert
        return None


# -- faulty client behaviours -------------------------------------------------

SPLIT_CHOICES = ("A", "B", "AB", "BA", "")


def split_patterns(validators: Sequence[str]):
    """Every way to deliver two conflicting txs to each validator."""
    import itertools
    for combo in itertools.product(SPLIT_CHOICES, repeat=len(validators)):
        yield dict(zip(validators, combo))


@dataclass
class Equivocator:
    """Sends two conflicting transactions following ``pattern``."""
    pattern: dict

    def deliveries(self, tx_a: Tx, tx_b: Tx):
        out = []
        for v, order in self.pattern.items():
            for ch in order:
                out.append((v, tx_a if ch == "A" else tx_b))
        return out


@dataclass
class Crasher:
    """Assembles a certificate, hands it to a single validator, then stops."""
    target_index: int = 0


@dataclass
class Resubmitter:
    """Sends every message twice."""
    copies: int = 2
