"""Random event traces for the Trust Zone state machine and a checker that
asserts its safety properties after every event."""

from __future__ import annotations

import numpy as np

from tzsim.backhaul import DEFAULT_CLASSES
from tzsim.trust_zone import (
    AuditOp,
    TrustStatus,
    TrustZoneState,
    TzMode,
    apply_event,
    replay,
)

TT = TrustStatus.TEMPORARILY_TRUSTED
CA = TrustStatus.CENTRALLY_AUTHENTICATED


def random_trace(gen: np.random.Generator, length: int, n_ues: int = 8) -> list[dict]:
    """A valid event trace: complete_handback is only emitted in hand-back mode."""
    events, state = [], TrustZoneState()
    step = 0
    for _ in range(length):
        step += int(gen.integers(0, 2))
        kind = gen.integers(0, 10)
        if state.mode is TzMode.HANDBACK_IN_PROGRESS and kind >= 8:
            ev = {"event": "complete_handback", "step": step, "ue": None, "op": "", "detail": str(int(gen.integers(1, 4)))}
        elif kind < 3:
            s = int(gen.integers(1, 10))
            ev = {"event": "backhaul_report", "step": step, "ue": None, "op": DEFAULT_CLASSES[s - 1].value, "detail": str(s)}
        elif kind < 9:
            synced = "synced" if gen.random() < 0.5 else "unsynced"
            ev = {"event": "authenticate", "step": step, "ue": int(gen.integers(0, n_ues)), "op": synced, "detail": ""}
        else:
            ev = {"event": "depart", "step": step, "ue": int(gen.integers(0, n_ues)), "op": "", "detail": ""}
        apply_event(state, ev)
        events.append(ev)
    return events


def check_trace(events: list[dict]) -> TrustZoneState:
    """Apply ``events`` one at a time and assert every safety property."""
    state = TrustZoneState()
    local_auth_calls = 0
    for ev in events:
        before_ledger = dict(state.ledger)
        before_mode = state.mode
        n_before = len(state.central_log) + len(state.audit_buffer)
        apply_event(state, ev)
        # a flush moves the buffer to the end of the central log, so the
        # concatenation only ever grows at the tail
        new_records = (state.central_log + state.audit_buffer)[n_before:]
        if ev["event"] == "authenticate" and before_mode is TzMode.LOCAL_SECURITY:
            local_auth_calls += 1
        for ue, status in state.ledger.items():
            old = before_ledger.get(ue, TrustStatus.UNAUTHENTICATED)
            if status is TT and old is not TT:
                # safety: promotion to temporary trust needs a same-step success record
                assert old in (TrustStatus.UNAUTHENTICATED, TrustStatus.EMERGENCY_ONLY), (ue, old)
                assert any(
                    r.ue == ue and r.op is AuditOp.LOCAL_AUTH_SUCCESS and r.step == ev["step"] for r in new_records
                ), (ue, ev)
            if old is TT and status is not TT:
                # asymmetry: temporary trust only converts through hand-back re-authentication
                assert ev["event"] == "complete_handback" and status is CA, (ue, ev)
                assert any(r.ue == ue and r.op is AuditOp.HANDBACK_REAUTH for r in new_records)
        # mode-level invariants
        assert state.laa_active == (state.mode is not TzMode.CENTRAL_SECURITY)
        assert not state.handback_queue or state.mode is TzMode.HANDBACK_IN_PROGRESS
        if state.mode is TzMode.CENTRAL_SECURITY:
            assert TT not in state.ledger.values()
            assert not state.audit_buffer
        # audit completeness, counted over everything ever recorded
        every = state.central_log + state.audit_buffer
        ops = [r.op for r in every]
        assert ops.count(AuditOp.LOCAL_AUTH_SUCCESS) + ops.count(AuditOp.LOCAL_AUTH_DENIED) == local_auth_calls
        keys = [(r.step, r.seq) for r in every]
        assert keys == sorted(keys) and len(set(keys)) == len(keys)
    # replay reproduces the state bit-exactly
    assert replay(events) == state
    return state
