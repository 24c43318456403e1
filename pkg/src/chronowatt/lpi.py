"""IEEE 802.3az low-power-idle link state machine.

Phases follow the standard graph::

    Active -> Sleep -> Quiet <-> Refresh
    {Quiet, Refresh} -> Wake -> Active

Traffic that arrives during Sleep is remembered and the wake sequence
starts as soon as the sleep sequence completes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .errors import ParameterError, ProtocolError


class Phase(str, Enum):
    ACTIVE = "Active"
    SLEEP = "Sleep"
    QUIET = "Quiet"
    REFRESH = "Refresh"
    WAKE = "Wake"


class Stimulus(str, Enum):
    IDLE_DETECTED = "idle_detected"
    TRAFFIC_PENDING = "traffic_pending"
    TIMER = "timer"


EDGES = frozenset({
    (Phase.ACTIVE, Phase.SLEEP),
    (Phase.SLEEP, Phase.QUIET),
    (Phase.SLEEP, Phase.WAKE),  # deferred wake after the sleep sequence completes
    (Phase.QUIET, Phase.REFRESH),
    (Phase.REFRESH, Phase.QUIET),
    (Phase.QUIET, Phase.WAKE),
    (Phase.REFRESH, Phase.WAKE),
    (Phase.WAKE, Phase.ACTIVE),
})


@dataclass(frozen=True)
class LpiParams:
    t_s: int = 200_000
    t_q: int = 40_000
    t_r: int = 1_300
    t_w: int = 30_000
    quiet_power_fraction: float = 0.1
    refresh_power_fraction: float = 1.0

    def __post_init__(self):
        if min(self.t_q, self.t_r, self.t_w) <= 0 or self.t_s < 0:
            raise ParameterError("LPI durations must be positive")
        if not 0 <= self.quiet_power_fraction <= self.refresh_power_fraction <= 1:
            raise ParameterError("need 0 <= quiet fraction <= refresh fraction <= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "LpiParams":
        keys = {"t_s_ns": "t_s", "t_q_ns": "t_q", "t_r_ns": "t_r", "t_w_ns": "t_w",
                "quiet_power_fraction": "quiet_power_fraction",
                "refresh_power_fraction": "refresh_power_fraction"}
        unknown = set(doc) - set(keys) - {"supported"}
        if unknown:
            raise ParameterError(f"unknown LPI keys: {sorted(unknown)}")
        kwargs = {keys[k]: v for k, v in doc.items() if k in keys}
        for k in ("t_s", "t_q", "t_r", "t_w"):
            if k in kwargs:
                kwargs[k] = int(kwargs[k])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {"t_s_ns": self.t_s, "t_q_ns": self.t_q, "t_r_ns": self.t_r, "t_w_ns": self.t_w,
                "quiet_power_fraction": self.quiet_power_fraction,
                "refresh_power_fraction": self.refresh_power_fraction}


DEFAULT_PARAMS = LpiParams()


@dataclass(frozen=True)
class LpiState:
    phase: Phase = Phase.ACTIVE
    phase_entered_at: int = 0
    pending_wake: bool = False


def phase_power_fraction(phase: Phase, params: LpiParams) -> float:
    """Fraction of Active PHY draw consumed in ``phase``.

    Sleep and Wake draw full power (a transition draws the larger endpoint).
    """
    if phase is Phase.QUIET:
        return params.quiet_power_fraction
    if phase is Phase.REFRESH:
        return params.refresh_power_fraction
    return 1.0


def phase_deadline(state: LpiState, params: LpiParams) -> int | None:
    duration = {Phase.SLEEP: params.t_s, Phase.QUIET: params.t_q,
                Phase.REFRESH: params.t_r, Phase.WAKE: params.t_w}.get(state.phase)
    return None if duration is None else state.phase_entered_at + duration


def lpi_advance(state: LpiState, params: LpiParams, now: int,
                stimulus: Stimulus | str) -> tuple[LpiState, int | None, float]:
    """Apply one stimulus.

    Returns ``(new_state, next_deadline, fraction)`` where ``fraction`` is
    the power fraction that applied over the phase being left (or still
    running, when the phase does not change).
    """
    stimulus = Stimulus(stimulus)
    if now < state.phase_entered_at:
        raise ProtocolError(f"time went backwards: {now} < {state.phase_entered_at}")
    phase = state.phase
    fraction = phase_power_fraction(phase, params)
    deadline = phase_deadline(state, params)

    if stimulus is Stimulus.TIMER:
        if deadline is None:
            raise ProtocolError(f"timer in phase {phase.value}")
        if now != deadline:
            raise ProtocolError(f"timer at {now}, deadline is {deadline}")
        if phase is Phase.SLEEP:
            nxt = Phase.WAKE if state.pending_wake else Phase.QUIET
        elif phase is Phase.QUIET:
            nxt = Phase.REFRESH
        elif phase is Phase.REFRESH:
            nxt = Phase.QUIET
        else:
            nxt = Phase.ACTIVE
        new = LpiState(nxt, now, False)
        return new, phase_deadline(new, params), fraction

    if stimulus is Stimulus.IDLE_DETECTED:
        if phase is not Phase.ACTIVE:
            raise ProtocolError(f"idle_detected in phase {phase.value}")
        new = LpiState(Phase.SLEEP, now, False)
        return new, phase_deadline(new, params), fraction

    # traffic pending
    if phase is Phase.ACTIVE or phase is Phase.WAKE:
        return state, deadline, fraction
    if phase is Phase.SLEEP:
        return replace(state, pending_wake=True), deadline, fraction
    new = LpiState(Phase.WAKE, now, False)
    return new, phase_deadline(new, params), fraction


def added_delay_bound(params: LpiParams) -> int:
    """Worst-case LPI-induced delay: arrival right after sleep initiation."""
    return params.t_s + params.t_w


def duty_cycle_power(params: LpiParams) -> float:
    """Average power fraction over a sustained Quiet/Refresh cycle."""
    period = params.t_q + params.t_r
    return (params.t_q * params.quiet_power_fraction + params.t_r * params.refresh_power_fraction) / period


def cycle_phase_at(params: LpiParams, quiet_entered: int, now: int) -> LpiState:
    """Phase of an undisturbed Quiet/Refresh cycle at ``now``."""
    period = params.t_q + params.t_r
    n, offset = divmod(now - quiet_entered, period)
    start = quiet_entered + n * period
    if offset < params.t_q:
        return LpiState(Phase.QUIET, start)
    return LpiState(Phase.REFRESH, start + params.t_q)


def cycle_energy_split(params: LpiParams, quiet_entered: int, t0: int, t1: int) -> tuple[float, float]:
    """Time-weighted power fractions (quiet, refresh) spent in the cycle on [t0, t1).

    Returned values are in ``fraction * ns`` so callers multiply by the
    Active draw in watts and 1e-9 to get joules.
    """
    q_ns, r_ns = _cycle_time_split(params, quiet_entered, t0, t1)
    return q_ns * params.quiet_power_fraction, r_ns * params.refresh_power_fraction


def _cycle_time_split(params: LpiParams, origin: int, t0: int, t1: int) -> tuple[int, int]:
    def cumulative(t):
        period = params.t_q + params.t_r
        n, off = divmod(t - origin, period)
        quiet = n * params.t_q + min(off, params.t_q)
        return quiet, (t - origin) - quiet

    if t1 <= t0:
        return 0, 0
    q1, r1 = cumulative(t1)
    q0, r0 = cumulative(t0)
    return q1 - q0, r1 - r0


def cycle_boundaries(params: LpiParams, quiet_entered: int, t0: int, t1: int):
    """Yield the Quiet/Refresh switch instants strictly inside (t0, t1)."""
    state = cycle_phase_at(params, quiet_entered, t0)
    t = phase_deadline(state, params)
    phase = state.phase
    while t < t1:
        yield t
        if phase is Phase.QUIET:
            phase, t = Phase.REFRESH, t + params.t_r
        else:
            phase, t = Phase.QUIET, t + params.t_q


@dataclass(frozen=True)
class LinkCapability:
    params: LpiParams
    supported: bool = True


def negotiate(local: LinkCapability, peer: LinkCapability, refresh_from: str = "local") -> LpiParams | None:
    """Resolve LPI parameters between link partners; ``None`` means disabled.

    The slower waker governs ``t_w``. Refresh timing comes from the side
    named by ``refresh_from``.
    """
    if not (local.supported and peer.supported):
        return None
    if refresh_from not in ("local", "peer"):
        raise ParameterError(f"refresh_from must be 'local' or 'peer', got {refresh_from!r}")
    src = local.params if refresh_from == "local" else peer.params
    return replace(local.params, t_q=src.t_q, t_r=src.t_r, t_w=max(local.params.t_w, peer.params.t_w))
