"""Safety checks over a recorded execution trace.

Every check takes the list of trace records (dicts, as written to NDJSON)
and returns ``{"ok": bool, "violations": [...]}``. Validators listed as
faulty in the header are left out of agreement checks.
"""

from __future__ import annotations

from collections import defaultdict


def _header(records):
    for r in records:
        if r.get("ev") == "header":
            return r
    return {"committee": {}, "faulty": []}


def _result(violations):
    return {"ok": not violations, "violations": violations}


def check_bcb(records) -> dict:
    """No object version is certified for two different, non-aborted txs."""
    aborted = {r["tx"] for r in records
               if (r["ev"] == "exec" and not r["ok"]) or (r["ev"] == "settle" and not r["ok"])}
    holders = defaultdict(set)
    for r in records:
        if r["ev"] != "txcert":
            continue
        for key in r["keys"]:
            holders[(r["epoch"], tuple(key))].add(r["tx"])
    bad = []
    for (epoch, key), txs in sorted(holders.items()):
        live = sorted(txs - aborted)
        if len(live) > 1:
            bad.append({"epoch": epoch, "key": list(key), "txs": live})
    return _result(bad)


def check_shared_lock_prefix(records) -> dict:
    """Shared-lock assignments of correct validators agree up to a prefix."""
    faulty = set(_header(records).get("faulty", []))
    seqs = defaultdict(lambda: defaultdict(list))
    for r in records:
        if r["ev"] == "shared_lock" and r["actor"] not in faulty:
            locks = sorted((k, v) for k, v in r["locks"].items())
            seqs[r["epoch"]][r["actor"]].append((r["tx"], locks))
    bad = []
    for epoch, per in sorted(seqs.items()):
        names = sorted(per)
        for a in names:
            for b in names:
                if a >= b:
                    continue
                x, y = per[a], per[b]
                n = min(len(x), len(y))
                if x[:n] != y[:n]:
                    i = next(i for i in range(n) if x[i] != y[i])
                    bad.append({"epoch": epoch, "validators": [a, b], "position": i})
    return _result(bad)


def check_checkpoint_agreement(records) -> dict:
    faulty = set(_header(records).get("faulty", []))
    seen = defaultdict(set)
    for r in records:
        if r["ev"] == "checkpoint" and r["actor"] not in faulty:
            seen[(r["epoch"], r["seq"])].add(r["digest"])
    bad = [{"epoch": e, "seq": s, "digests": sorted(d)}
           for (e, s), d in sorted(seen.items()) if len(d) > 1]
    return _result(bad)


def check_handover_agreement(records) -> dict:
    """Correct validators leave an epoch with the same latest-version map."""
    faulty = set(_header(records).get("faulty", []))
    seen = defaultdict(set)
    for r in records:
        if r["ev"] == "handover" and r["actor"] not in faulty:
            seen[r["epoch"]].add(r["latest_digest"])
    bad = [{"epoch": e, "digests": sorted(d)} for e, d in sorted(seen.items()) if len(d) > 1]
    return _result(bad)


def check_no_reverted_effcert(records) -> dict:
    """A tx executed identically by a quorum is never rolled back."""
    committee = _header(records).get("committee", {})
    total = sum(committee.values())
    quorum = 2 * total // 3 + 1
    faulty = set(_header(records).get("faulty", []))
    execs = defaultdict(set)
    for r in records:
        if r["ev"] == "exec":
            execs[(r["epoch"], r["tx"], r["effects"])].add(r["actor"])
    by_tx = defaultdict(list)
    for (epoch, tx, eff), who in execs.items():
        by_tx[(epoch, tx)].append(who)
    bad = []
    for r in records:
        if r["ev"] != "rollback" or r["actor"] in faulty:
            continue
        for tx in r["txs"]:
            for who in by_tx.get((r["epoch"], tx), []):
                if sum(committee.get(v, 0) for v in who) >= quorum:
                    bad.append({"epoch": r["epoch"], "tx": tx, "validator": r["actor"]})
    return _result(bad)


def check_final_checkpointed(records) -> dict:
    """Every tx final in a finished epoch sits in that epoch's checkpoints."""
    faulty = set(_header(records).get("faulty", []))
    ended = {r["epoch"] for r in records if r["ev"] == "handover" and r["actor"] not in faulty}
    included = defaultdict(set)
    for r in records:
        if r["ev"] == "checkpoint" and r["actor"] not in faulty:
            included[r["epoch"]].update(r["txs"])
    bad = []
    for r in records:
        if r["ev"] == "final" and r["epoch"] in ended and r["tx"] not in included[r["epoch"]]:
            bad.append({"epoch": r["epoch"], "tx": r["tx"], "client": r["actor"]})
    return _result(bad)


CHECKS = {
    "bcb_no_conflicting_certs": check_bcb,
    "shared_lock_prefix": check_shared_lock_prefix,
    "checkpoint_agreement": check_checkpoint_agreement,
    "handover_agreement": check_handover_agreement,
    "no_reverted_effcert": check_no_reverted_effcert,
    "final_is_checkpointed": check_final_checkpointed,
}


def check_trace(records) -> dict:
    return {name: fn(records) for name, fn in CHECKS.items()}


def finality_waves(records) -> list[dict]:
    """Break owned-tx finality into its two request/response waves.

    Needs network deliveries in the trace. For each owned tx the first wave
    ends when the quorum-th signature reaches the client, the second when
    the quorum-th certificate reply does. Returns one row per finalized tx.
    """
    committee = _header(records).get("committee", {})
    quorum = 2 * sum(committee.values()) // 3 + 1
    submits = {r["tx"]: r for r in records if r["ev"] == "submit" and r["kind"] == "owned"}
    finals = {r["tx"]: r["t"] for r in records if r["ev"] == "final"}
    arrivals = defaultdict(list)
    for r in records:
        if r["ev"] == "deliver" and r["kind"] in ("txsign", "certreply") and r["tx"] in submits:
            arrivals[(r["tx"], r["kind"])].append((r["t"], r["src"]))

    def quorum_time(rows):
        acc, seen = 0, set()
        for t, src in sorted(rows):
            if src not in seen:
                seen.add(src)
                acc += committee.get(src, 0)
                if acc >= quorum:
                    return t
        return None

    out = []
    for tx, sub in submits.items():
        if tx not in finals:
            continue
        cert_at = quorum_time(arrivals[(tx, "txsign")])
        final_at = quorum_time(arrivals[(tx, "certreply")])
        if cert_at is None or final_at is None:
            continue
        out.append({"tx": tx, "submit": sub["t"], "final": finals[tx],
                    "wave1": cert_at - sub["t"], "wave2": final_at - cert_at})
    return out
