"""Trust Zone operating-mode and trust-ledger state machine.

The state is a mutable object updated in place by the module-level event
functions; every function also returns it so calls can be chained. Events
are applied by a single writer in step order. :func:`apply_event` and
:func:`replay` rebuild a state from a recorded event trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .backhaul import StateClass

DEFAULT_TRIGGER_STATES = frozenset({4, 5, 9})


class TzMode(str, Enum):
    CENTRAL_SECURITY = "CentralSecurity"
    LOCAL_SECURITY = "LocalSecurity"
    HANDBACK_IN_PROGRESS = "HandbackInProgress"


class TrustStatus(str, Enum):
    CENTRALLY_AUTHENTICATED = "CentrallyAuthenticated"
    TEMPORARILY_TRUSTED = "TemporarilyTrusted"
    EMERGENCY_ONLY = "EmergencyOnly"
    UNAUTHENTICATED = "Unauthenticated"


class AuthOutcome(str, Enum):
    CENTRALLY_AUTHENTICATED = "CentrallyAuthenticated"
    TEMPORARILY_TRUSTED = "TemporarilyTrusted"
    EMERGENCY_ONLY = "EmergencyOnly"
    RETRY_LATER = "RetryLater"


class AuditOp(str, Enum):
    LOCAL_AUTH_SUCCESS = "LocalAuthSuccess"
    LOCAL_AUTH_DENIED = "LocalAuthDenied"
    EMERGENCY_ACCESS_GRANTED = "EmergencyAccessGranted"
    HANDBACK_REAUTH = "HandbackReauth"


@dataclass(frozen=True)
class AuditRecord:
    step: int
    seq: int
    ue: int
    op: AuditOp
    detail: str = ""

    def to_dict(self) -> dict:
        return {"step": self.step, "ue": self.ue, "op": self.op.value, "detail": self.detail}


@dataclass
class TrustZoneState:
    trigger_states: frozenset[int] = DEFAULT_TRIGGER_STATES
    mode: TzMode = TzMode.CENTRAL_SECURITY
    ledger: dict[int, TrustStatus] = field(default_factory=dict)
    pre_switch: set[int] = field(default_factory=set)
    local_auth_at: dict[int, tuple[int, int]] = field(default_factory=dict)
    handback_queue: list[int] = field(default_factory=list)
    audit_buffer: list[AuditRecord] = field(default_factory=list)
    central_log: list[AuditRecord] = field(default_factory=list)
    laa_active: bool = False
    seq: int = 0
    step: int = 0

    def status(self, ue: int) -> TrustStatus:
        return self.ledger.get(ue, TrustStatus.UNAUTHENTICATED)

    def _audit(self, step: int, ue: int, op: AuditOp, detail: str = "") -> None:
        self.audit_buffer.append(AuditRecord(step, self.seq, ue, op, detail))
        self.seq += 1


def _triggers_local(state: TrustZoneState, condition: StateClass, backhaul_state: int | None) -> bool:
    if backhaul_state is not None:
        return int(backhaul_state) in state.trigger_states
    return condition in (StateClass.UNHEALTHY, StateClass.DISCONNECTED)


def on_backhaul_report(
    state: TrustZoneState, condition: StateClass, backhaul_state: int | None = None
) -> TrustZoneState:
    """Switch modes on a backhaul status report.

    With ``backhaul_state`` given, local mode engages iff that state is in
    ``state.trigger_states``; without it every unhealthy or disconnected
    report engages it. Only a Healthy report starts the hand-back.
    """
    condition = StateClass(condition)
    if state.mode is TzMode.CENTRAL_SECURITY:
        if _triggers_local(state, condition, backhaul_state):
            state.mode = TzMode.LOCAL_SECURITY
            state.laa_active = True
            # centrally authenticated users keep access through the switch
            state.pre_switch = {
                ue for ue, s in state.ledger.items() if s is TrustStatus.CENTRALLY_AUTHENTICATED
            }
    elif state.mode is TzMode.LOCAL_SECURITY and condition is StateClass.HEALTHY:
        state.mode = TzMode.HANDBACK_IN_PROGRESS
        queued = [ue for ue, s in state.ledger.items() if s is TrustStatus.TEMPORARILY_TRUSTED]
        queued.sort(key=lambda ue: state.local_auth_at[ue])
        state.handback_queue = queued
    return state


def authenticate(state: TrustZoneState, ue: int, synced: bool, step: int) -> tuple[TrustZoneState, AuthOutcome]:
    """Authenticate one UE under the current mode.

    Every call made in local mode leaves exactly one LocalAuthSuccess or
    LocalAuthDenied record in the audit buffer.
    """
    state.step = step
    if state.mode is TzMode.CENTRAL_SECURITY:
        state.ledger[ue] = TrustStatus.CENTRALLY_AUTHENTICATED
        return state, AuthOutcome.CENTRALLY_AUTHENTICATED
    if state.mode is TzMode.HANDBACK_IN_PROGRESS:
        if ue in state.handback_queue:
            return state, AuthOutcome.RETRY_LATER
        state.ledger[ue] = TrustStatus.CENTRALLY_AUTHENTICATED
        return state, AuthOutcome.CENTRALLY_AUTHENTICATED

    current = state.status(ue)
    if current is TrustStatus.CENTRALLY_AUTHENTICATED and ue in state.pre_switch:
        state._audit(step, ue, AuditOp.LOCAL_AUTH_SUCCESS, "pre-switch central trust honoured")
        return state, AuthOutcome.CENTRALLY_AUTHENTICATED
    if synced:
        state._audit(step, ue, AuditOp.LOCAL_AUTH_SUCCESS, "profile found in LSS")
        if current is not TrustStatus.TEMPORARILY_TRUSTED:
            state.local_auth_at[ue] = (step, state.seq - 1)
        state.ledger[ue] = TrustStatus.TEMPORARILY_TRUSTED
        return state, AuthOutcome.TEMPORARILY_TRUSTED
    state._audit(step, ue, AuditOp.LOCAL_AUTH_DENIED, "no profile in LSS")
    state._audit(step, ue, AuditOp.EMERGENCY_ACCESS_GRANTED, "emergency services only")
    if current is not TrustStatus.TEMPORARILY_TRUSTED:
        state.ledger[ue] = TrustStatus.EMERGENCY_ONLY
    return state, AuthOutcome.EMERGENCY_ONLY


def authenticate_central_batch(state: TrustZoneState, ues: Iterable[int], step: int) -> TrustZoneState:
    """Fast path for many arrivals while the central V-AAA is in charge."""
    if state.mode is not TzMode.CENTRAL_SECURITY:
        raise RuntimeError("batch central authentication requires CentralSecurity mode")
    state.step = step
    state.ledger.update(dict.fromkeys(ues, TrustStatus.CENTRALLY_AUTHENTICATED))
    return state


def complete_handback(state: TrustZoneState, batch: int, step: int | None = None) -> tuple[TrustZoneState, list[AuditRecord]]:
    """Re-authenticate up to ``batch`` queued UEs centrally.

    Returns the state and the audit records flushed to the central log; the
    flush happens only when the queue empties and the TZ is back in central
    mode (otherwise the list is empty).

    Raises:
        RuntimeError: outside HandbackInProgress mode.
    """
    if state.mode is not TzMode.HANDBACK_IN_PROGRESS:
        raise RuntimeError(f"complete_handback called in mode {state.mode.value}")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    step = state.step if step is None else step
    state.step = step
    for ue in state.handback_queue[:batch]:
        state.ledger[ue] = TrustStatus.CENTRALLY_AUTHENTICATED
        state.local_auth_at.pop(ue, None)
        state._audit(step, ue, AuditOp.HANDBACK_REAUTH, "re-authenticated by central V-AAA")
    del state.handback_queue[:batch]
    flushed: list[AuditRecord] = []
    if not state.handback_queue:
        state.mode = TzMode.CENTRAL_SECURITY
        state.laa_active = False
        state.pre_switch = set()
        flushed = state.audit_buffer
        state.audit_buffer = []
        state.central_log.extend(flushed)
    return state, flushed


def depart(state: TrustZoneState, ues: Iterable[int]) -> TrustZoneState:
    """Forget UEs that left the region."""
    ues = list(ues)
    pop = state.ledger.pop
    for ue in ues:
        pop(ue, None)
    if state.pre_switch:
        state.pre_switch.difference_update(ues)
    if state.local_auth_at:
        for ue in ues:
            state.local_auth_at.pop(ue, None)
    if state.handback_queue:
        gone = set(ues)
        state.handback_queue = [ue for ue in state.handback_queue if ue not in gone]
    return state


def audit_export(state: TrustZoneState) -> list[AuditRecord]:
    """Passive pull of the buffered audit records (no mutation)."""
    return list(state.audit_buffer)


# --------------------------------------------------------------------------- traces


def apply_event(state: TrustZoneState, event: dict) -> TrustZoneState:
    """Apply one trace record: ``{"event", "step", "ue", "op", "detail"}``."""
    kind = event["event"]
    step = int(event.get("step", state.step))
    if kind == "backhaul_report":
        detail = event.get("detail")
        state.step = step
        on_backhaul_report(state, StateClass(event["op"]), int(detail) if detail not in (None, "") else None)
    elif kind == "authenticate":
        authenticate(state, int(event["ue"]), event["op"] == "synced", step)
    elif kind == "complete_handback":
        complete_handback(state, int(event["detail"]), step)
    elif kind == "depart":
        state.step = step
        depart(state, [int(event["ue"])])
    else:
        raise ValueError(f"unknown event {kind!r}")
    return state


def replay(events: Iterable[dict], trigger_states: Iterable[int] = DEFAULT_TRIGGER_STATES) -> TrustZoneState:
    state = TrustZoneState(trigger_states=frozenset(trigger_states))
    for event in events:
        apply_event(state, event)
    return state


def write_jsonl(path: str | Path, records: Sequence[AuditRecord | dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            doc = r.to_dict() if isinstance(r, AuditRecord) else r
            fh.write(json.dumps(doc, sort_keys=False) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
