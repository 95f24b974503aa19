"""Vector fields of the two-strategy resource-consumption model.

The model couples the share ``x`` of agents exploiting a limited, slowly
renewable resource with that resource's stock ``y``.  Strategy switching
follows a Boltzmann (softmax) rule on the cost-profit difference between
the two resources, so the fast field is built from sigmoidal gains; the
slow field is logistic harvesting ``y * (1 - r*x)`` scaled by the
timescale separation ``epsilon``.

Also provided here: the generalized quadratic fold system (fast component
``a_c x^{2k} + b_c y``), its parametrically perturbed variant, and the
classic quadratic special case.  All evaluations are pure functions of
(state, parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "PoleError",
    "State",
    "DecisionParamsFull",
    "DecisionParamsReduced",
    "NormalFormParams",
    "PerturbationSpec",
    "SystemDefinition",
    "sigmoid",
    "profit_difference",
    "eval_full",
    "eval_reduced",
    "eval_normal_form",
    "eval_perturbed_normal_form",
    "classic_normal_form_params",
    "full_system",
    "reduced_system",
    "normal_form_system",
    "perturbed_normal_form_system",
]

# |d - x| below this is treated as sitting on the cost pole.
POLE_TOL = 1e-12


class PoleError(ArithmeticError):
    """Raised when the cost term c/(d - x) is evaluated at its pole."""


def sigmoid(z: float) -> float:
    """Logistic function 1/(1+e^-z), branch-stable for |z| up to ~1e4."""
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class State:
    """Phase-space point: exploiting share x and resource stock y."""

    x: float
    y: float

    def __post_init__(self) -> None:
        _require(math.isfinite(self.x) and math.isfinite(self.y),
                 "state components must be finite")


@dataclass(frozen=True)
class DecisionParamsFull:
    """Full parameter set of the two-strategy model.

    alpha1/alpha2 are conditional-exploration offsets, beta1/beta2 inverse
    temperatures, gamma1/gamma2 switching-consideration rates, eta1/eta2
    unconditional-exploration probabilities.  b is the unit benefit of the
    unlimited resource, c and d shape its cost c/(d - x), r the relative
    harvesting rate and epsilon the timescale separation.
    """

    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    gamma1: float
    gamma2: float
    eta1: float
    eta2: float
    b: float
    c: float
    d: float
    r: float
    epsilon: float

    def __post_init__(self) -> None:
        _require(self.alpha1 > 0 and self.alpha2 > 0, "alpha1, alpha2 must be > 0")
        _require(self.beta1 > 0 and self.beta2 > 0, "beta1, beta2 must be > 0")
        _require(self.gamma1 > 0 and self.gamma2 > 0, "gamma1, gamma2 must be > 0")
        _require(0.0 <= self.eta1 <= 1.0 and 0.0 <= self.eta2 <= 1.0,
                 "eta1, eta2 must be in [0, 1]")
        _require(self.b > 1, "b must be > 1")
        _require(self.c > 0, "c must be > 0")
        _require(self.d > 1, "d must be > 1 (keeps c/(d-x) finite on x in [0,1])")
        _require(self.r > 0, "r must be > 0")
        _require(0.0 < self.epsilon < 1.0, "epsilon must be in (0, 1)")


@dataclass(frozen=True)
class DecisionParamsReduced:
    """Homogeneous parameter set: shared alpha, beta; gamma = gamma1/gamma2; eta = 0.

    ``epsilon`` is interpreted as already rescaled by gamma2, i.e. the reduced
    system is the full system with gamma1 = gamma, gamma2 = 1.
    """

    alpha: float
    beta: float
    gamma: float
    b: float
    c: float
    d: float
    r: float
    epsilon: float

    def __post_init__(self) -> None:
        _require(self.alpha > 0, "alpha must be > 0")
        _require(self.beta > 0, "beta must be > 0")
        _require(self.gamma > 0, "gamma must be > 0")
        _require(self.b > 1, "b must be > 1")
        _require(self.c > 0, "c must be > 0")
        _require(self.d > 1, "d must be > 1 (keeps c/(d-x) finite on x in [0,1])")
        _require(self.r > 0, "r must be > 0")
        _require(0.0 < self.epsilon < 1.0, "epsilon must be in (0, 1)")

    def to_full(self) -> DecisionParamsFull:
        """Equivalent full parameter set (eta=0, gamma1=gamma, gamma2=1)."""
        return DecisionParamsFull(
            alpha1=self.alpha, alpha2=self.alpha,
            beta1=self.beta, beta2=self.beta,
            gamma1=self.gamma, gamma2=1.0,
            eta1=0.0, eta2=0.0,
            b=self.b, c=self.c, d=self.d, r=self.r, epsilon=self.epsilon,
        )


@dataclass(frozen=True)
class NormalFormParams:
    """Local fold data: fast x' = a_c x^{2k} + b_c y, slow y' = -eps*sigma*k*a_c*x^{2k-1}.

    ``sigma`` must equal sign(a_c*b_c).  ``slow_offset`` is the constant slow
    forcing (0 when compensated); it subtracts inside the slow bracket.
    """

    a_c: float
    b_c: float
    k: int
    sigma: int
    epsilon: float
    slow_offset: float = 0.0

    def __post_init__(self) -> None:
        _require(self.a_c != 0.0, "a_c must be nonzero")
        _require(self.b_c != 0.0, "b_c must be nonzero")
        _require(self.k >= 1, "contact order k must be >= 1")
        _require(self.sigma in (-1, 1), "sigma must be -1 or +1")
        _require(self.sigma == (1 if self.a_c * self.b_c > 0 else -1),
                 "sigma must equal sign(a_c*b_c)")
        _require(self.epsilon > 0, "epsilon must be > 0")


@dataclass(frozen=True)
class PerturbationSpec:
    """Additive coefficient perturbations (a_c+delta_a, b_c+delta_b)."""

    delta_a: float
    delta_b: float

    def __post_init__(self) -> None:
        _require(math.isfinite(self.delta_a) and math.isfinite(self.delta_b),
                 "perturbations must be finite")


def profit_difference(s: State, c: float, d: float, b: float) -> float:
    """Cost-profit difference delta(x, y) = y + c/(d - x) - b."""
    gap = d - s.x
    if abs(gap) < POLE_TOL:
        raise PoleError(f"profit difference evaluated at the cost pole x ~ d = {d}")
    return s.y + c / gap - b


def _full_fast(x: float, y: float, p: DecisionParamsFull) -> float:
    gap = p.d - x
    if abs(gap) < POLE_TOL:
        raise PoleError(f"fast field evaluated at the cost pole x ~ d = {p.d}")
    delta = y + p.c / gap - p.b
    gain_in = p.eta1 + (1.0 - p.eta1) * sigmoid(p.beta1 * (p.alpha1 + delta))
    gain_out = p.eta2 + (1.0 - p.eta2) * sigmoid(p.beta2 * (p.alpha2 - delta))
    return p.gamma1 * (1.0 - x) * gain_in - p.gamma2 * x * gain_out


def _full_slow(x: float, y: float, p: DecisionParamsFull) -> float:
    return y * (1.0 - p.r * x)


def eval_full(s: State, p: DecisionParamsFull) -> tuple[float, float]:
    """Right-hand side of the full model: (dx, eps * y * (1 - r*x))."""
    return _full_fast(s.x, s.y, p), p.epsilon * _full_slow(s.x, s.y, p)


def eval_reduced(s: State, p: DecisionParamsReduced) -> tuple[float, float]:
    """Right-hand side of the reduced (eta=0, shared alpha/beta) model."""
    return eval_full(s, p.to_full())


def _nf_fast(x: float, y: float, nf: NormalFormParams) -> float:
    return nf.a_c * x ** (2 * nf.k) + nf.b_c * y


def _nf_slow(x: float, y: float, nf: NormalFormParams) -> float:
    return -(nf.sigma * nf.k * nf.a_c * x ** (2 * nf.k - 1) - nf.slow_offset)


def eval_normal_form(s: State, nf: NormalFormParams) -> tuple[float, float]:
    """Generalized quadratic fold system (a_c x^{2k} + b_c y, -eps sigma k a_c x^{2k-1})."""
    return _nf_fast(s.x, s.y, nf), nf.epsilon * _nf_slow(s.x, s.y, nf)


@dataclass(frozen=True)
class _FoldCoeffs:
    """Unvalidated coefficient bundle (perturbations may break the sigma rule)."""

    a_c: float
    b_c: float
    k: int
    sigma: int
    epsilon: float
    slow_offset: float


def perturbed_params(nf: NormalFormParams, pert: PerturbationSpec) -> _FoldCoeffs:
    """Coefficients with the perturbation folded in; sigma and k kept from nf."""
    return _FoldCoeffs(nf.a_c + pert.delta_a, nf.b_c + pert.delta_b,
                       nf.k, nf.sigma, nf.epsilon, nf.slow_offset)


def eval_perturbed_normal_form(
    s: State, nf: NormalFormParams, pert: PerturbationSpec
) -> tuple[float, float]:
    """Perturbed fold system with (a_c+delta_a, b_c+delta_b); sigma, k from nf."""
    q = perturbed_params(nf, pert)
    return _nf_fast(s.x, s.y, q), q.epsilon * _nf_slow(s.x, s.y, q)


def classic_normal_form_params(epsilon: float, slow_offset: float = 0.0) -> NormalFormParams:
    """Classic quadratic canard system x' = -y + x^2, y' = eps*(x + slow_offset)."""
    return NormalFormParams(a_c=1.0, b_c=-1.0, k=1, sigma=-1,
                            epsilon=epsilon, slow_offset=slow_offset)


@dataclass(frozen=True)
class SystemDefinition:
    """Fast-slow system as a pair of scalar fields plus timescale.

    ``fast(x, y)`` is the x' field; ``slow(x, y)`` is the slow field G with the
    y-equation being y' = epsilon * G(x, y).
    """

    fast: object
    slow: object
    epsilon: float
    name: str = "system"

    def rhs(self, t: float, x: float, y: float) -> tuple[float, float]:
        return self.fast(x, y), self.epsilon * self.slow(x, y)

    def layer(self) -> "SystemDefinition":
        """Layer problem: same fast field, y frozen (epsilon = 0 limit)."""
        return SystemDefinition(fast=self.fast, slow=_zero_field,
                                epsilon=0.0, name=self.name + "-layer")


def _zero_field(x: float, y: float) -> float:
    return 0.0


def full_system(p: DecisionParamsFull) -> SystemDefinition:
    return SystemDefinition(
        fast=lambda x, y: _full_fast(x, y, p),
        slow=lambda x, y: _full_slow(x, y, p),
        epsilon=p.epsilon, name="full",
    )


def reduced_system(p: DecisionParamsReduced) -> SystemDefinition:
    q = p.to_full()
    return SystemDefinition(
        fast=lambda x, y: _full_fast(x, y, q),
        slow=lambda x, y: _full_slow(x, y, q),
        epsilon=p.epsilon, name="reduced",
    )


def normal_form_system(nf: NormalFormParams) -> SystemDefinition:
    return SystemDefinition(
        fast=lambda x, y: _nf_fast(x, y, nf),
        slow=lambda x, y: _nf_slow(x, y, nf),
        epsilon=nf.epsilon, name="normal_form",
    )


def perturbed_normal_form_system(
    nf: NormalFormParams, pert: PerturbationSpec
) -> SystemDefinition:
    q = perturbed_params(nf, pert)
    return SystemDefinition(
        fast=lambda x, y: _nf_fast(x, y, q),
        slow=lambda x, y: _nf_slow(x, y, q),
        epsilon=q.epsilon, name="perturbed_normal_form",
    )
