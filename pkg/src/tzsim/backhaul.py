"""Backhaul reliability as a nine-state Markov chain.

States are numbered 1..9 everywhere in the public API. Each state carries a
central security service reliability (CSSR): the probability that the central
security server answers in time during one simulation step. A step without a
timely answer is an outage (CSSO).
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

N_STATES = 9
ROW_SUM_TOL = 1e-9

REFERENCE_TRANSITION = (
    (0.8, 0.1999, 0, 0, 0, 0, 0, 0, 0.0001),
    (0.5, 0.49, 0.0099, 0, 0, 0, 0, 0, 0.0001),
    (0, 0.25, 0.5, 0.15, 0, 0.0999, 0, 0, 0.0001),
    (0, 0, 0.25, 0.5, 0.15, 0, 0.0999, 0, 0.0001),
    (0, 0, 0, 0.2, 0.6, 0, 0, 0.1, 0.1),
    (0, 0.5, 0, 0, 0, 0.5, 0, 0, 0),
    (0, 0, 0, 0, 0, 0.5, 0.5, 0, 0),
    (0, 0, 0, 0, 0, 0, 0.5, 0.5, 0),
    (0, 0, 0, 0, 0, 0, 0, 0.3, 0.7),
)

DEFAULT_CSSR = (0.99999, 0.9999, 0.999, 0.99, 0.9, 0.999, 0.99, 0.9, 0.0)


class StateClass(str, Enum):
    HEALTHY = "Healthy"
    UNHEALTHY = "Unhealthy"
    DISCONNECTED = "Disconnected"
    UNDER_RECOVERY = "UnderRecovery"


DEFAULT_CLASSES = (
    StateClass.HEALTHY,
    StateClass.HEALTHY,
    StateClass.UNHEALTHY,
    StateClass.UNHEALTHY,
    StateClass.UNHEALTHY,
    StateClass.UNDER_RECOVERY,
    StateClass.UNDER_RECOVERY,
    StateClass.UNDER_RECOVERY,
    StateClass.DISCONNECTED,
)


class ChainValidationError(ValueError):
    """Raised by :func:`require_valid` with the first violated rule."""

    def __init__(self, result: "ValidationResult"):
        super().__init__(result.message)
        self.result = result


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    rule: str | None = None
    row: int | None = None
    col: int | None = None
    message: str = "ok"

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True, eq=False)
class BackhaulChain:
    """Transition matrix plus per-state CSSR and class labels.

    Arrays are stored read-only; a chain is safe to share between workers.
    """

    transition: np.ndarray
    cssr: np.ndarray
    classes: tuple[StateClass, ...] = DEFAULT_CLASSES
    _cumulative: tuple[list[float], ...] = field(init=False, repr=False)
    _last_positive: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        t = np.array(self.transition, dtype=np.float64)
        c = np.array(self.cssr, dtype=np.float64)
        if t.shape != (N_STATES, N_STATES):
            raise ValueError(f"transition must be {N_STATES}x{N_STATES}, got {t.shape}")
        if c.shape != (N_STATES,):
            raise ValueError(f"cssr must have {N_STATES} entries, got {c.shape}")
        classes = tuple(StateClass(k) for k in self.classes)
        if len(classes) != N_STATES:
            raise ValueError(f"class must have {N_STATES} labels")
        t.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "cssr", c)
        object.__setattr__(self, "classes", classes)
        object.__setattr__(self, "_cumulative", tuple(np.cumsum(row).tolist() for row in t))
        last = []
        for row in t:
            nz = np.flatnonzero(row > 0)
            last.append(int(nz[-1]) if nz.size else N_STATES - 1)
        object.__setattr__(self, "_last_positive", tuple(last))

    def __eq__(self, other):
        if not isinstance(other, BackhaulChain):
            return NotImplemented
        return (
            np.array_equal(self.transition, other.transition)
            and np.array_equal(self.cssr, other.cssr)
            and self.classes == other.classes
        )

    @classmethod
    def default(cls) -> "BackhaulChain":
        return cls(np.array(REFERENCE_TRANSITION, dtype=float), np.array(DEFAULT_CSSR))

    def class_of(self, state: int) -> StateClass:
        return self.classes[_idx(state)]

    def states_of(self, klass: StateClass) -> list[int]:
        return [i + 1 for i, k in enumerate(self.classes) if k is klass]

    def to_dict(self) -> dict:
        return {
            "transition": self.transition.tolist(),
            "cssr": self.cssr.tolist(),
            "class": [k.value for k in self.classes],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BackhaulChain":
        unknown = set(doc) - {"transition", "cssr", "class"}
        if unknown:
            raise ValueError(f"unknown chain keys: {sorted(unknown)}")
        return cls(
            np.asarray(doc["transition"], dtype=float),
            np.asarray(doc.get("cssr", DEFAULT_CSSR), dtype=float),
            tuple(doc.get("class", [k.value for k in DEFAULT_CLASSES])),
        )

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BackhaulChain":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _idx(state: int) -> int:
    if not 1 <= int(state) <= N_STATES:
        raise ValueError(f"state index must be in 1..{N_STATES}, got {state}")
    return int(state) - 1


# --------------------------------------------------------------------------- structure


def _band_and_recovery(classes: Sequence[StateClass], cssr: np.ndarray):
    band = [i for i, k in enumerate(classes) if k in (StateClass.HEALTHY, StateClass.UNHEALTHY)]
    unhealthy = [i for i in band if classes[i] is StateClass.UNHEALTHY]
    recovery = [i for i, k in enumerate(classes) if k is StateClass.UNDER_RECOVERY]
    # top of the recovery ladder first (highest CSSR)
    recovery = sorted(recovery, key=lambda i: (-cssr[i], i))
    return band, unhealthy, recovery


def structural_mask(
    classes: Sequence[StateClass] = DEFAULT_CLASSES, cssr: Sequence[float] = DEFAULT_CSSR
) -> np.ndarray:
    """Boolean 9x9 mask of transitions permitted by the chain's structure.

    Permitted: self-loops; moves between neighbouring CSSR levels of the
    healthy/unhealthy band; any band state to a disconnected state; the k-th
    unhealthy state to the k-th recovery state; disconnected to the lowest
    recovery state; one rung up the recovery ladder; top recovery state to any
    healthy state.
    """
    cssr = np.asarray(cssr, dtype=float)
    mask = np.eye(N_STATES, dtype=bool)
    band, unhealthy, recovery = _band_and_recovery(classes, cssr)
    disconnected = [i for i, k in enumerate(classes) if k is StateClass.DISCONNECTED]
    healthy = [i for i, k in enumerate(classes) if k is StateClass.HEALTHY]
    for a, b in zip(band, band[1:]):
        mask[a, b] = mask[b, a] = True
    for i in band:
        mask[i, disconnected] = True
    for u, r in zip(unhealthy, recovery):
        mask[u, r] = True
    if recovery:
        for d in disconnected:
            mask[d, recovery[-1]] = True
        for lower, upper in zip(recovery[1:], recovery):
            mask[lower, upper] = True
        mask[recovery[0], healthy] = True
    return mask


def validate_chain(chain: BackhaulChain, strict: bool = True) -> ValidationResult:
    """Check stochasticity, CSSR ordering and (if ``strict``) structure.

    Returns the first violated rule; row/col are 1-based state indexes.
    """
    t, c, classes = chain.transition, chain.cssr, chain.classes
    for i in range(N_STATES):
        for j in range(N_STATES):
            if not t[i, j] >= 0.0:
                return ValidationResult(
                    False, "nonnegative", i + 1, j + 1,
                    f"transition[{i + 1}][{j + 1}] = {t[i, j]} is negative",
                )
    for i in range(N_STATES):
        s = float(t[i].sum())
        if abs(s - 1.0) > ROW_SUM_TOL:
            return ValidationResult(False, "row_sum", i + 1, None, f"row {i + 1} sums to {s!r}, not 1")
    for i in range(N_STATES):
        if not 0.0 <= c[i] <= 1.0:
            return ValidationResult(False, "cssr_range", i + 1, None, f"cssr[{i + 1}] = {c[i]} outside [0, 1]")
        if classes[i] is StateClass.DISCONNECTED and c[i] != 0.0:
            return ValidationResult(False, "cssr_disconnected", i + 1, None, f"disconnected state {i + 1} must have cssr 0")
    band = [i for i, k in enumerate(classes) if k in (StateClass.HEALTHY, StateClass.UNHEALTHY)]
    recovery = [i for i, k in enumerate(classes) if k is StateClass.UNDER_RECOVERY]
    for name, seq in (("cssr_band_order", band), ("cssr_recovery_order", recovery)):
        for a, b in zip(seq, seq[1:]):
            if not c[a] > c[b]:
                return ValidationResult(
                    False, name, a + 1, b + 1,
                    f"cssr must strictly decrease from state {a + 1} to {b + 1} ({c[a]} vs {c[b]})",
                )
    if strict:
        mask = structural_mask(classes, c)
        for i in range(N_STATES):
            for j in range(N_STATES):
                if t[i, j] > 0.0 and not mask[i, j]:
                    return ValidationResult(
                        False, "adjacency", i + 1, j + 1,
                        f"transition {i + 1}->{j + 1} is not structurally permitted",
                    )
    return ValidationResult(True)


def require_valid(chain: BackhaulChain, strict: bool = True) -> BackhaulChain:
    result = validate_chain(chain, strict=strict)
    if not result:
        raise ChainValidationError(result)
    return chain


# --------------------------------------------------------------------------- dynamics


def step_chain(chain: BackhaulChain, current: int, draw: float) -> int:
    """Next state by cumulative-sum inversion over columns 1..9."""
    i = _idx(current)
    j = bisect.bisect_right(chain._cumulative[i], draw)
    if j >= N_STATES:
        # draw landed in the rounding gap above the row's float sum
        j = chain._last_positive[i]
    return j + 1


def draw_csso(chain: BackhaulChain, state: int, draw: float) -> bool:
    return draw < 1.0 - chain.cssr[_idx(state)]


def simulate_states(chain: BackhaulChain, start: int, draws: Iterable[float]) -> np.ndarray:
    """State after each draw (the start state itself is not included)."""
    cum = chain._cumulative
    last = chain._last_positive
    out = []
    append = out.append
    br = bisect.bisect_right
    s = _idx(start)
    for u in draws:
        j = br(cum[s], u)
        s = j if j < N_STATES else last[s]
        append(s)
    return np.asarray(out, dtype=np.int64) + 1


def survival_within(chain: BackhaulChain, start: int, k: int) -> float:
    """Probability that none of steps 1..k has an outage, given state ``start`` at step 0."""
    if int(k) < 1:
        raise ValueError(f"horizon must be >= 1 step, got {k}")
    mass = np.zeros(N_STATES)
    mass[_idx(start)] = 1.0
    for _ in range(int(k)):
        mass = (mass @ chain.transition) * chain.cssr
    return float(mass.sum())


def outage_probability_within(chain: BackhaulChain, start: int, k: int) -> float:
    """P(at least one CSSO in steps 1..k | state ``start`` at step 0)."""
    return 1.0 - survival_within(chain, start, k)


# --------------------------------------------------------------------------- fitting


def fit_from_log(
    observations: Sequence[int], smoothing: float = 0.0, mask: np.ndarray | None = None
) -> np.ndarray:
    """Maximum-likelihood transition matrix from an observed state trace.

    Pseudo-counts are added only where ``mask`` (default: the structural
    mask) allows. Rows that end up with no mass become self-loops.
    """
    obs = np.asarray(list(observations), dtype=np.int64)
    if obs.ndim != 1 or obs.size < 2:
        raise ValueError("need at least two observations to fit transitions")
    if obs.min() < 1 or obs.max() > N_STATES:
        raise ValueError(f"observations must be state indexes in 1..{N_STATES}")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    if mask is None:
        mask = structural_mask()
    counts = np.zeros((N_STATES, N_STATES))
    np.add.at(counts, (obs[:-1] - 1, obs[1:] - 1), 1.0)
    counts += smoothing * np.asarray(mask, dtype=float)
    totals = counts.sum(axis=1)
    out = np.eye(N_STATES)
    seen = totals > 0
    out[seen] = counts[seen] / totals[seen, None]
    return out


def fit_chain(
    observations: Sequence[int],
    smoothing: float = 0.0,
    cssr: Sequence[float] = DEFAULT_CSSR,
    classes: Sequence[StateClass] = DEFAULT_CLASSES,
) -> BackhaulChain:
    mask = structural_mask(classes, cssr)
    return BackhaulChain(fit_from_log(observations, smoothing, mask), np.asarray(cssr), tuple(classes))


def read_log(path: str | Path) -> list[int]:
    """Read a one-state-per-line trace; blank lines are skipped.

    Raises:
        ValueError: on a malformed line, naming its 1-based line number.
    """
    states = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                value = int(text)
            except ValueError:
                raise ValueError(f"line {lineno}: not a state index: {text!r}") from None
            if not 1 <= value <= N_STATES:
                raise ValueError(f"line {lineno}: state {value} outside 1..{N_STATES}")
            states.append(value)
    return states


# --------------------------------------------------------------------------- stationary


@dataclass(frozen=True)
class StationaryResult:
    distribution: np.ndarray
    unique: bool
    iterations: int
    residual: float


class NonConvergenceError(RuntimeError):
    pass


def closed_class_count(transition: np.ndarray) -> int:
    """Number of closed communicating classes (recurrent classes) of a chain."""
    adj = np.asarray(transition) > 0
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    closed = 0
    for comp in range(n_comp):
        members = labels == comp
        if not adj[np.ix_(members, ~members)].any():
            closed += 1
    return closed


def stationary_distribution(
    chain: BackhaulChain, tol: float = 1e-12, max_iter: int = 1_000_000
) -> StationaryResult:
    """Power iteration from the uniform vector until ``|pi T - pi|_1 < tol``.

    If the chain has several closed classes the stationary vector is not
    unique; the uniform vector is returned with ``unique=False``.
    """
    t = chain.transition
    uniform = np.full(N_STATES, 1.0 / N_STATES)
    if closed_class_count(t) > 1:
        residual = float(np.abs(uniform @ t - uniform).sum())
        return StationaryResult(uniform, False, 0, residual)
    pi = uniform
    for it in range(1, max_iter + 1):
        nxt = pi @ t
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - pi).sum())
        pi = nxt
        if residual < tol:
            return StationaryResult(pi, True, it, residual)
    raise NonConvergenceError(f"power iteration did not converge in {max_iter} iterations (residual {residual:.3e})")
