"""Explicit Runge-Kutta integration for two-dimensional fast-slow systems.

Two steppers: classic fixed-step RK4 and the adaptive Dormand-Prince 5(4)
embedded pair (FSAL).  Scheduled times (controller switches, hooks) are
forced to land on step endpoints so mode changes are step-aligned.  A pole
raised by the right-hand side aborts the run and returns the trajectory up
to the last good state; step underflow below ``dt_min`` does the same and
signals stiffness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import PoleError, State, SystemDefinition

__all__ = [
    "IntegrationConfig",
    "Event",
    "Trajectory",
    "StepUnderflowError",
    "integrate",
    "integrate_layer",
]


class StepUnderflowError(RuntimeError):
    """Adaptive step fell below dt_min: the problem is too stiff here."""


@dataclass(frozen=True)
class IntegrationConfig:
    """Stepper selection and tolerances.

    ``method`` is ``"rk4-fixed"`` (uses ``dt``) or ``"rk45-adaptive"`` (uses
    ``rtol``/``atol`` with dt clamped to [dt_min, dt_max]).  Samples are
    recorded every ``sample_stride`` accepted steps; the endpoint is always
    recorded.
    """

    method: str = "rk45-adaptive"
    t0: float = 0.0
    t_end: float = 1.0
    dt: float = 1e-3
    rtol: float = 1e-8
    atol: float = 1e-10
    dt_min: float = 1e-12
    dt_max: float = math.inf
    dt_init: float = 1e-4
    sample_stride: int = 1
    max_steps: int = 50_000_000

    def __post_init__(self) -> None:
        if self.method not in ("rk4-fixed", "rk45-adaptive"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be > 0")
        if not self.dt_min <= self.dt_max:
            raise ValueError("dt_min must be <= dt_max")
        if self.t_end < self.t0:
            raise ValueError("t_end must be >= t0")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be >= 1")


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    detail: str = ""


@dataclass
class Trajectory:
    """Sampled solution.  times strictly increasing, one state row per time."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray | None = None
    hamiltonian: np.ndarray | None = None
    events: list[Event] = field(default_factory=list)
    complete: bool = True
    error: str | None = None

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.states[:, 1]

    def final_state(self) -> State:
        return State(float(self.states[-1, 0]), float(self.states[-1, 1]))


# Dormand-Prince 5(4) tableau; the 5th-order solution propagates and its
# last stage doubles as the next step's first stage (FSAL).
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_E = tuple(b5 - b4 for b5, b4 in zip(
    _DP_B5,
    (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40),
))


class _Recorder:
    def __init__(self, system, stride: int):
        self.stride = stride
        self.times: list[float] = []
        self.xs: list[float] = []
        self.ys: list[float] = []
        self.sampler = getattr(system, "outputs", None)
        self.us: list[float] = []
        self.vs: list[float] = []
        self.hs: list[float] = []
        self._n_accept = 0

    def record(self, t: float, x: float, y: float, force: bool = False) -> None:
        if not force and self._n_accept % self.stride != 0:
            return
        if self.times and t <= self.times[-1]:
            return
        self.times.append(t)
        self.xs.append(x)
        self.ys.append(y)
        if self.sampler is not None:
            u, v, h = self.sampler(t, x, y)
            self.us.append(u)
            self.vs.append(v)
            self.hs.append(h)

    def step_accepted(self) -> None:
        self._n_accept += 1

    def finish(self, events, complete, error) -> Trajectory:
        states = np.column_stack([np.asarray(self.xs), np.asarray(self.ys)]) \
            if self.times else np.empty((0, 2))
        controls = None
        hamiltonian = None
        if self.sampler is not None:
            controls = np.column_stack([np.asarray(self.us), np.asarray(self.vs)]) \
                if self.times else np.empty((0, 2))
            hamiltonian = np.asarray(self.hs)
        return Trajectory(times=np.asarray(self.times), states=states,
                          controls=controls, hamiltonian=hamiltonian,
                          events=list(events), complete=complete, error=error)


def _breakpoint_schedule(cfg: IntegrationConfig, hooks, breakpoints) -> list[tuple[float, object]]:
    marks: dict[float, list] = {}
    for t in breakpoints:
        if cfg.t0 < t < cfg.t_end:
            marks.setdefault(float(t), [])
    for t, fn in hooks:
        if cfg.t0 < t < cfg.t_end:
            marks.setdefault(float(t), []).append(fn)
    return sorted(marks.items())


def integrate(system: SystemDefinition, s0: State, cfg: IntegrationConfig,
              hooks=(), breakpoints=()) -> Trajectory:
    """Integrate ``system`` from ``s0`` over [t0, t_end].

    ``hooks`` is a sequence of (time, fn) pairs; each fn(t, (x, y)) is called
    once when the integrator lands on its time (landing is forced, so hook
    and breakpoint times are exact step endpoints).  ``breakpoints`` forces
    additional landings without callbacks (controller schedule switches).
    """
    rhs = system.rhs
    t = cfg.t0
    x, y = s0.x, s0.y
    events: list[Event] = []
    rec = _Recorder(system, cfg.sample_stride)
    rec.record(t, x, y, force=True)
    marks = _breakpoint_schedule(cfg, hooks, breakpoints)
    mark_i = 0
    if cfg.t_end == cfg.t0:
        return rec.finish(events, True, None)

    def fire_marks(t_now: float) -> None:
        nonlocal mark_i
        while mark_i < len(marks) and marks[mark_i][0] <= t_now:
            for fn in marks[mark_i][1]:
                fn(t_now, (x, y))
            events.append(Event(marks[mark_i][0], "mark", "scheduled time reached"))
            mark_i += 1

    def next_stop() -> float:
        return marks[mark_i][0] if mark_i < len(marks) else cfg.t_end

    if cfg.method == "rk4-fixed":
        return _run_rk4(rhs, rec, events, cfg, t, x, y, fire_marks, next_stop)
    return _run_dp45(rhs, rec, events, cfg, t, x, y, fire_marks, next_stop)


def _run_rk4(rhs, rec, events, cfg, t, x, y, fire_marks, next_stop) -> Trajectory:
    dt_base = cfg.dt
    n = 0
    while t < cfg.t_end - 1e-15 * max(1.0, abs(cfg.t_end)):
        stop = min(next_stop(), cfg.t_end)
        dt = dt_base
        landing = None
        if stop - t <= dt:
            dt = stop - t
            landing = stop
        try:
            k1 = rhs(t, x, y)
            k2 = rhs(t + dt / 2, x + dt / 2 * k1[0], y + dt / 2 * k1[1])
            k3 = rhs(t + dt / 2, x + dt / 2 * k2[0], y + dt / 2 * k2[1])
            k4 = rhs(t + dt, x + dt * k3[0], y + dt * k3[1])
        except PoleError as exc:
            events.append(Event(t, "pole", str(exc)))
            return rec.finish(events, False, f"pole error at t={t}")
        x += dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y += dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        t = landing if landing is not None else t + dt
        n += 1
        rec.step_accepted()
        rec.record(t, x, y)
        fire_marks(t)
        if n > cfg.max_steps:
            events.append(Event(t, "max_steps", "step budget exhausted"))
            return rec.finish(events, False, "max step count exceeded")
    rec.record(t, x, y, force=True)
    return rec.finish(events, True, None)


def _run_dp45(rhs, rec, events, cfg, t, x, y, fire_marks, next_stop) -> Trajectory:
    dt = min(cfg.dt_init, cfg.dt_max, cfg.t_end - t)
    k = [(0.0, 0.0)] * 7
    try:
        k[0] = rhs(t, x, y)
    except PoleError as exc:
        events.append(Event(t, "pole", str(exc)))
        return rec.finish(events, False, f"pole error at t={t}")
    n = 0
    tiny = 1e-15
    while t < cfg.t_end - tiny * max(1.0, abs(cfg.t_end)):
        stop = min(next_stop(), cfg.t_end)
        dt = min(dt, cfg.dt_max)
        landing = None
        if stop - t <= dt:
            dt = stop - t
            landing = stop
        if dt < cfg.dt_min:
            events.append(Event(t, "step_underflow", f"dt={dt:.3e} < dt_min"))
            return rec.finish(events, False, "step underflow (stiffness?)")
        try:
            for i in range(1, 7):
                xa, ya = x, y
                for j, aij in enumerate(_DP_A[i]):
                    if aij != 0.0:
                        xa += dt * aij * k[j][0]
                        ya += dt * aij * k[j][1]
                k[i] = rhs(t + _DP_C[i] * dt, xa, ya)
        except PoleError as exc:
            events.append(Event(t, "pole", str(exc)))
            return rec.finish(events, False, f"pole error at t={t}")
        x5 = x + dt * sum(b * k[i][0] for i, b in enumerate(_DP_B5) if b != 0.0)
        y5 = y + dt * sum(b * k[i][1] for i, b in enumerate(_DP_B5) if b != 0.0)
        ex = dt * sum(e * k[i][0] for i, e in enumerate(_DP_E) if e != 0.0)
        ey = dt * sum(e * k[i][1] for i, e in enumerate(_DP_E) if e != 0.0)
        sx = cfg.atol + cfg.rtol * max(abs(x), abs(x5))
        sy = cfg.atol + cfg.rtol * max(abs(y), abs(y5))
        err = math.sqrt(0.5 * ((ex / sx) ** 2 + (ey / sy) ** 2))
        if err <= 1.0:
            t = landing if landing is not None else t + dt
            x, y = x5, y5
            k[0] = k[6]  # FSAL: last stage sits at (t_new, state_new)
            n += 1
            rec.step_accepted()
            rec.record(t, x, y)
            fire_marks(t)
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            factor = max(0.1, 0.9 * err ** -0.2)  # k[0] still valid at (t, x, y)
        dt *= factor
        if n > cfg.max_steps:
            events.append(Event(t, "max_steps", "step budget exhausted"))
            return rec.finish(events, False, "max step count exceeded")
    rec.record(t, x, y, force=True)
    return rec.finish(events, True, None)


def integrate_layer(system: SystemDefinition, s0: State, cfg: IntegrationConfig) -> Trajectory:
    """Integrate the layer problem x' = F(x, y0) with y frozen exactly."""
    return integrate(system.layer(), s0, cfg)
