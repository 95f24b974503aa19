"""Hamiltonian level-set machinery and compatible canard controllers.

Near a fold with local data (a_c, b_c, k, sigma), the open-loop orbits of
the quadratic-like system are level sets of an exponentially weighted
Hamiltonian.  The fast controller drives the level error H - h to zero with
rate B_c * x^{2k}; it factors as a polynomial feedback plus one combined
exponential term, so the e^{+2dy/(sigma eps)} inside H and the e^{-...}
in the gain never meet as two overflowing factors.  The target level
h = -(1/4) sign(b_c) e^{-c_c/eps} is exponentially small; c_c sets the
cycle amplitude (the orbit turns around where the exponential term
re-emerges above the polynomial one).

Three actuation variants:
  * fast control centered on the fold (the slow equation already balances
    at the fold, e.g. the pure normal form);
  * fast control shifted to x = 1/r (decision model with unactuated slow
    dynamics, whose drift reverses at 1/r rather than at the fold);
  * joint fast-slow control (constant slow input v = -(1 - r x*) recenters
    the slow reversal so no shift is needed).

Controllers are only trusted inside a validity region around the fold;
outside it the control is forced to zero and the exit is logged.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .integrator import Event
from .model import NormalFormParams, PerturbationSpec, State, SystemDefinition, perturbed_params

__all__ = [
    "OverflowRegionError",
    "RobustnessStatus",
    "ControllerConfig",
    "ControlOutput",
    "ControlledSystem",
    "hamiltonian_classic",
    "hamiltonian_general",
    "hamiltonian_perturbed",
    "hamiltonian_delta",
    "target_h",
    "fast_control_u",
    "fast_control_shifted",
    "joint_fast_slow",
    "robustness_check",
    "lyapunov_value",
    "closed_loop_rhs",
]

# Exponent bound for the Hamiltonian weight; beyond it the expansion is far
# out of its validity band and exp() would overflow anyway.
EXP_BOUND = 700.0
# Fast-direction validity radius around the fold (local expansion only).
X_RADIUS_DEFAULT = 0.5
# Slow control is suppressed on (a sliver above) the invariant line y = 0.
Y_FLOOR = 1e-9


class OverflowRegionError(ArithmeticError):
    """Hamiltonian weight exponent left the representable band."""


class RobustnessStatus(enum.Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"
    NOT_APPLICABLE = "not_applicable"


def hamiltonian_classic(s: State, eps: float) -> float:
    """Level function of the classic quadratic system: (1/2)e^{-2y/eps}(y/eps - x^2/eps + 1/2)."""
    expo = -2.0 * s.y / eps
    if abs(expo) > EXP_BOUND:
        raise OverflowRegionError(f"exponent {expo:.1f} outside +-{EXP_BOUND:.0f}")
    return 0.5 * math.exp(expo) * (s.y / eps - s.x ** 2 / eps + 0.5)


def _ham_general(x: float, y: float, a_c: float, b_c: float, k: int, sigma: int,
                 eps: float, origin: tuple[float, float]) -> float:
    dx = x - origin[0]
    dy = y - origin[1]
    expo = 2.0 * dy / (sigma * eps)
    if abs(expo) > EXP_BOUND:
        raise OverflowRegionError(f"exponent {expo:.1f} outside +-{EXP_BOUND:.0f}")
    return (sigma / 2.0) * math.exp(expo) * (
        b_c * dy / eps + a_c * dx ** (2 * k) / eps - sigma * b_c / 2.0)


def hamiltonian_general(s: State, nf: NormalFormParams,
                        origin: tuple[float, float] = (0.0, 0.0)) -> float:
    """Level function of the generalized quadratic system, shifted to ``origin``."""
    return _ham_general(s.x, s.y, nf.a_c, nf.b_c, nf.k, nf.sigma, nf.epsilon, origin)


def hamiltonian_perturbed(s: State, nf: NormalFormParams, pert: PerturbationSpec,
                          origin: tuple[float, float] = (0.0, 0.0)) -> float:
    """Level function of the perturbed system (coefficients a_c+da, b_c+db)."""
    q = perturbed_params(nf, pert)
    return _ham_general(s.x, s.y, q.a_c, q.b_c, q.k, q.sigma, q.epsilon, origin)


def hamiltonian_delta(s: State, nf: NormalFormParams, pert: PerturbationSpec,
                      origin: tuple[float, float] = (0.0, 0.0)) -> float:
    """Perturbation part H_delta; pointwise H = H_p - H_delta."""
    return _ham_general(s.x, s.y, pert.delta_a, pert.delta_b, nf.k, nf.sigma,
                        nf.epsilon, origin)


def target_h(nf: NormalFormParams, c_c: float) -> tuple[float, bool]:
    """Target level h = -(1/4) sign(b_c) e^{-c_c/eps} and an underflow flag.

    The exponential is taken directly so subnormal magnitudes survive; when
    it underflows to zero the flag is set and h = +-0.0 targets the maximal
    canard.
    """
    if c_c <= 0:
        raise ValueError("c_c must be > 0")
    mag = math.exp(-c_c / nf.epsilon)
    h = -0.25 * math.copysign(1.0, nf.b_c) * mag
    return h, mag == 0.0


def _u_factored(dx_gain: float, dx_shape: float, dy: float, nf: NormalFormParams,
                B_c: float, h: float, c_c: float | None) -> float:
    """-(eps B_c dx_gain)/(sigma k a_c) * (H - h) e^{-2dy/(sigma eps)} without
    pairing the two exponentials.

    ``dx_gain`` feeds the desingularized gain, ``dx_shape`` the parabola term
    inside H (they differ only for the 1/r-shifted controller, where both
    use the shifted offset; kept separate for clarity at call sites).
    """
    eps = nf.epsilon
    poly = (nf.sigma / 2.0) * (nf.b_c * dy + nf.a_c * dx_shape ** (2 * nf.k)
                               - nf.sigma * nf.b_c * eps / 2.0)
    if c_c is not None:
        # eps*h*e^{-2dy/(sigma eps)} with the exponents merged analytically:
        # the target magnitude may be subnormal while the weight is huge.
        expo = (-c_c - 2.0 * dy / nf.sigma) / eps
        hterm = 0.0 if expo < -745.0 else \
            -0.25 * math.copysign(1.0, nf.b_c) * eps * math.exp(expo)
    else:
        expo = -2.0 * dy / (nf.sigma * eps)
        hterm = eps * h * math.exp(expo) if expo <= EXP_BOUND else math.inf * h
    return -(B_c * dx_gain / (nf.sigma * nf.k * nf.a_c)) * (poly - hterm)


def fast_control_u(s: State, nf: NormalFormParams, origin: tuple[float, float],
                   B_c: float, h: float, c_c: float | None = None) -> float:
    """Compatible fast control centered on the fold at ``origin``.

    Passing ``c_c`` (the exponent that generated ``h``) lets the h-term keep
    full range when e^{-c_c/eps} underflows.
    """
    dx = s.x - origin[0]
    dy = s.y - origin[1]
    return _u_factored(dx, dx, dy, nf, B_c, h, c_c)


def fast_control_shifted(s: State, nf: NormalFormParams, origin: tuple[float, float],
                         B_c: float, h: float, r: float,
                         c_c: float | None = None) -> float:
    """Fast control for unactuated slow dynamics: cycle recentered at x = 1/r.

    Adds the parabola swap -a_c(x-x*)^{2k} + a_c(x-1/r)^{2k} and evaluates
    both the gain factor and the level function at the shifted offset.
    """
    dx_star = s.x - origin[0]
    dx_r = s.x - 1.0 / r
    dy = s.y - origin[1]
    swap = -nf.a_c * dx_star ** (2 * nf.k) + nf.a_c * dx_r ** (2 * nf.k)
    return swap + _u_factored(dx_r, dx_r, dy, nf, B_c, h, c_c)


def joint_fast_slow(s: State, nf: NormalFormParams, origin: tuple[float, float],
                    B_c: float, h: float, r: float,
                    c_c: float | None = None) -> tuple[float, float]:
    """Joint scheme: fold-centered fast control plus constant slow signal.

    v = -(1 - r x*) recenters the slow reversal onto the fold fiber.  The
    signal is injected through the stock itself, y' = eps*y*((1 - r*x) + v),
    so the closed slow flow is y*r*(x* - x): it vanishes exactly on the
    fiber (a plain additive constant would instead leave a residual drift
    (y-1)(1 - r*x*) there, which presses the orbit into the turning term
    and stalls the cycle at the fold fiber), and it vanishes on the
    invariant line y = 0 as the slow control must.  The y <= Y_FLOOR gate
    additionally zeroes the reported signal on that line.
    """
    u = fast_control_u(s, nf, origin, B_c, h, c_c)
    v = -(1.0 - r * origin[0])
    if s.y <= Y_FLOOR:
        v = 0.0
    return u, v


def robustness_check(nf: NormalFormParams, pert: PerturbationSpec) -> RobustnessStatus:
    """Whether the unperturbed controller still converges under (da, db).

    The derived condition sigma*da < db*|a_c/b_c| holds for db > 0 only;
    other signs are reported as not applicable rather than guessed.
    """
    if pert.delta_b <= 0.0:
        return RobustnessStatus.NOT_APPLICABLE
    if nf.sigma * pert.delta_a < pert.delta_b * abs(nf.a_c / nf.b_c):
        return RobustnessStatus.SATISFIED
    return RobustnessStatus.VIOLATED


def lyapunov_value(s: State, nf: NormalFormParams, origin: tuple[float, float],
                   h: float) -> float:
    """Level-error energy (H - h)^2 / 2."""
    err = hamiltonian_general(s, nf, origin) - h
    return 0.5 * err * err


@dataclass
class ControllerConfig:
    """One controller instance: gains, target level, actuation mode, window.

    ``mode`` is "fast_only", "fast_slow", or "off".  Fast-only control uses
    the 1/r-shifted variant whenever ``r`` is given (decision model); with
    ``r`` None it is the fold-centered law (pure normal form).  ``schedule``
    is a list of (time, mode) switches, strictly increasing in time; before
    the first entry the configured ``mode`` applies.
    """

    nf: NormalFormParams
    x_star: float
    y_star: float
    B_c: float
    c_c: float
    mode: str = "fast_only"
    r: float | None = None
    x_radius: float = X_RADIUS_DEFAULT
    schedule: list = field(default_factory=list)
    h: float = math.nan
    h_underflow: bool = False

    def __post_init__(self) -> None:
        if self.B_c <= 0:
            raise ValueError("controller gain B_c must be > 0")
        if self.mode not in ("fast_only", "fast_slow", "off"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "fast_slow" and self.r is None:
            raise ValueError("fast_slow mode needs the harvesting rate r")
        if math.isnan(self.h):
            self.h, self.h_underflow = target_h(self.nf, self.c_c)
        if not -0.25 < self.h < 0.25:
            raise ValueError("target level h must lie in (-1/4, 1/4)")
        times = [t for t, _ in self.schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")
        for _, mode in self.schedule:
            if mode not in ("fast_only", "fast_slow", "off"):
                raise ValueError(f"unknown scheduled mode {mode!r}")

    def mode_at(self, t: float) -> str:
        mode = self.mode
        for when, new_mode in self.schedule:
            if t >= when:
                mode = new_mode
            else:
                break
        return mode

    def in_region(self, x: float, y: float) -> bool:
        dy_scaled = 2.0 * (y - self.y_star) / (self.nf.sigma * self.nf.epsilon)
        return abs(dy_scaled) <= EXP_BOUND and abs(x - self.x_star) <= self.x_radius

    def origin(self) -> tuple[float, float]:
        return self.x_star, self.y_star

    def control(self, t: float, x: float, y: float) -> tuple[float, float, bool]:
        """(u, v, active) honoring mode, schedule and validity region."""
        mode = self.mode_at(t)
        if mode == "off":
            return 0.0, 0.0, False
        if not self.in_region(x, y):
            return 0.0, 0.0, False
        s = State(x, y)
        if mode == "fast_slow":
            u, v = joint_fast_slow(s, self.nf, self.origin(), self.B_c, self.h,
                                   self.r, c_c=self.c_c)
            return u, v, True
        if self.r is not None:
            u = fast_control_shifted(s, self.nf, self.origin(), self.B_c, self.h,
                                     self.r, c_c=self.c_c)
        else:
            u = fast_control_u(s, self.nf, self.origin(), self.B_c, self.h,
                               c_c=self.c_c)
        return u, 0.0, True

    def level_error(self, x: float, y: float) -> float:
        """H - h with the controller's own level function (shifted for
        fast-only with r); NaN outside the representable band."""
        mode_origin = self.origin()
        if self.mode == "fast_only" and self.r is not None:
            mode_origin = (1.0 / self.r, self.y_star)
        try:
            H = _ham_general(x, y, self.nf.a_c, self.nf.b_c, self.nf.k,
                             self.nf.sigma, self.nf.epsilon, mode_origin)
        except OverflowRegionError:
            return math.nan
        return H - self.h

    def schedule_times(self) -> list[float]:
        return [t for t, _ in self.schedule]


@dataclass
class ControlOutput:
    u: float
    v: float
    H: float
    H_err: float


def control_output(s: State, cfg: ControllerConfig, t: float = 0.0) -> ControlOutput:
    u, v, _ = cfg.control(t, s.x, s.y)
    err = cfg.level_error(s.x, s.y)
    return ControlOutput(u=u, v=v, H=err + cfg.h, H_err=err)


class ControlledSystem:
    """Closed loop: base fast-slow system plus scheduled controllers.

    The fast input adds to x'; the slow signal is injected through the
    stock, y' = eps*(G + y*v) (see joint_fast_slow).  At most one
    controller should be active at a time (schedules are the caller's
    responsibility); contributions sum.  Region entry/exit transitions are
    collected as events.
    """

    def __init__(self, base: SystemDefinition, controllers):
        self.base = base
        self.controllers = list(controllers)
        self.epsilon = base.epsilon
        self.events: list[Event] = []
        self._last_active: bool | None = None

    def rhs(self, t: float, x: float, y: float) -> tuple[float, float]:
        u_tot = 0.0
        v_tot = 0.0
        engaged = False
        should = False
        for cfg in self.controllers:
            u, v, active = cfg.control(t, x, y)
            u_tot += u
            v_tot += v
            engaged = engaged or active
            should = should or cfg.mode_at(t) != "off"
        if should and engaged != self._last_active:
            if self._last_active is not None:
                kind = "region_enter" if engaged else "region_exit"
                self.events.append(Event(t, kind, f"x={x:.6f}, y={y:.6f}"))
            self._last_active = engaged
        return (self.base.fast(x, y) + u_tot,
                self.epsilon * (self.base.slow(x, y) + y * v_tot))

    def outputs(self, t: float, x: float, y: float) -> tuple[float, float, float]:
        """(u, v, H) for trajectory sampling; H from the active controller."""
        u_tot = 0.0
        v_tot = 0.0
        H = math.nan
        for cfg in self.controllers:
            u, v, active = cfg.control(t, x, y)
            u_tot += u
            v_tot += v
            if active or math.isnan(H):
                err = cfg.level_error(x, y)
                H = err + cfg.h
        return u_tot, v_tot, H

    def schedule_times(self) -> list[float]:
        times = []
        for cfg in self.controllers:
            times.extend(cfg.schedule_times())
        return sorted(set(times))


def closed_loop_rhs(s: State, system: SystemDefinition, cfg: ControllerConfig,
                    t: float = 0.0) -> tuple[float, float]:
    """One-shot closed-loop field for a single controller (off mode gives the
    open-loop field exactly)."""
    return ControlledSystem(system, [cfg]).rhs(t, s.x, s.y)
