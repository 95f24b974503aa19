"""Local fold data by finite differences: contact order and the (a_c, b_c) pair.

The fast coefficient is a_c = F^(2k)(x*, y*) / (2k)! for the smallest k whose
2k-th x-derivative clears the noise threshold while all lower orders sit
below it; the slow coupling is b_c = dF/dy(x*, y*).  Derivatives come from
central differences with two levels of Richardson extrapolation, which is
exact for the polynomial test systems and good to ~1e-8 relative on the
decision model.
"""

from __future__ import annotations

import math
import warnings

from .manifold import FoldPoint
from .model import (
    DecisionParamsFull,
    DecisionParamsReduced,
    NormalFormParams,
    SystemDefinition,
    full_system,
    reduced_system,
)

__all__ = [
    "PrecisionLossWarning",
    "DegenerateFoldError",
    "FoldConditionError",
    "fd_derivative",
    "expand_at_fold",
]

# Relative threshold separating "vanishing" derivatives from the leading one.
DERIVATIVE_THRESHOLD = 1e-5
NEIGHBORHOOD_RADIUS = 0.05


class PrecisionLossWarning(UserWarning):
    """Richardson levels disagree: the derivative estimate lost precision."""


class DegenerateFoldError(RuntimeError):
    """No nonvanishing even derivative found up to order 2*k_max."""


class FoldConditionError(RuntimeError):
    """The slow coupling dF/dy vanishes at the fold (condition iii)."""


# Central-difference stencils, second-order accurate; offsets -> weights,
# to be divided by h**order.
_STENCILS = {
    1: ((-1, -0.5), (1, 0.5)),
    2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
    3: ((-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)),
    4: ((-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)),
    5: ((-3, -0.5), (-2, 2.0), (-1, -2.5), (1, 2.5), (2, -2.0), (3, 0.5)),
    6: ((-3, 1.0), (-2, -6.0), (-1, 15.0), (0, -20.0), (1, 15.0), (2, -6.0), (3, 1.0)),
}


def _stencil_value(fcn, at: float, order: int, h: float) -> tuple[float, float]:
    """(derivative estimate, magnitude of the largest sample used)."""
    acc = 0.0
    fmax = 0.0
    for offset, weight in _STENCILS[order]:
        v = fcn(at + offset * h)
        fmax = max(fmax, abs(v))
        acc += weight * v
    return acc / h ** order, fmax


def fd_derivative(fcn, at: float, order: int, h0: float | None = None,
                  noise_scale: float = 0.0, abs_floor: float = 0.0) -> float:
    """n-th derivative of a scalar function by Richardson-extrapolated
    central differences (orders 1..6, two refinement levels).

    Warns with PrecisionLossWarning when the last two extrapolation levels
    disagree by more than 1e-4 relative (beyond the rounding-noise floor of
    the finest stencil, so vanishing derivatives do not trip it).
    ``noise_scale`` lets callers widen that floor when fcn values arise from
    cancellation of larger internal terms; disagreements below ``abs_floor``
    are never significant to the caller and stay silent.
    """
    if not 1 <= order <= 6:
        raise ValueError("derivative order must be in 1..6")
    if h0 is None:
        h0 = max(1e-4, 1e-3 * abs(at))
    d0, _ = _stencil_value(fcn, at, order, h0)
    d1, _ = _stencil_value(fcn, at, order, h0 / 2)
    d2, fmax = _stencil_value(fcn, at, order, h0 / 4)
    # error ~ C h^2: one Richardson level kills h^2, the second kills h^4
    r1a = (4.0 * d1 - d0) / 3.0
    r1b = (4.0 * d2 - d1) / 3.0
    r2 = (16.0 * r1b - r1a) / 15.0
    wsum = sum(abs(w) for _, w in _STENCILS[order])
    noise = 2.3e-16 * max(fmax, noise_scale) * wsum / (h0 / 4) ** order
    scale = max(abs(r2), abs(r1b), 1e-300)
    if (abs(r2 - r1b) > 1e-4 * scale and abs(r2 - r1b) > 10.0 * noise
            and abs(r2 - r1b) > abs_floor):
        warnings.warn(
            f"order-{order} derivative at {at}: Richardson levels disagree "
            f"({r1b:.6e} vs {r2:.6e})", PrecisionLossWarning, stacklevel=2)
    return r2


def _fast_field_of(system) -> tuple:
    """(F(x, y), epsilon) from params, a SystemDefinition, or a bare callable."""
    if isinstance(system, DecisionParamsReduced):
        system = reduced_system(system)
    elif isinstance(system, DecisionParamsFull):
        system = full_system(system)
    if isinstance(system, SystemDefinition):
        return system.fast, system.epsilon
    raise TypeError(f"cannot extract a fast field from {type(system)!r}")


def expand_at_fold(fold: FoldPoint, system, k_max: int = 3,
                   force_k: int | None = None) -> NormalFormParams:
    """Contact order and local coefficients at a located fold point.

    ``system`` may be decision-model parameters or any SystemDefinition.
    ``force_k`` skips detection and reads off the jet at the given order
    (useful to compare competing local approximations).  The result is also
    written back onto ``fold``.
    """
    fast, epsilon = _fast_field_of(system)
    x0, y0 = fold.x_star, fold.y_star

    def f_x(x: float) -> float:
        return fast(x, y0)

    # Noise floor: relative to the field's size on a small neighborhood.
    span = [f_x(x0 + NEIGHBORHOOD_RADIUS * s / 4) for s in range(-4, 5)]
    span += [fast(x0, y0 + NEIGHBORHOOD_RADIUS * s / 4) for s in range(-4, 5)]
    scale = max(max(abs(v) for v in span), 1e-12)
    threshold = DERIVATIVE_THRESHOLD * scale

    def deriv(fn, at, order):
        return fd_derivative(fn, at, order, noise_scale=scale,
                             abs_floor=0.1 * threshold)

    if force_k is not None:
        k = force_k
        if not 1 <= 2 * k <= 6:
            raise ValueError("force_k must give 2k in 1..6")
        d2k = deriv(f_x, x0, 2 * k)
    else:
        k = None
        d2k = math.nan
        derivs = []
        for order in range(1, 2 * k_max + 1):
            derivs.append(deriv(f_x, x0, order))
            if order % 2 == 0:
                kk = order // 2
                if abs(derivs[-1]) > threshold and all(
                        abs(v) <= threshold for v in derivs[:-1]):
                    k = kk
                    d2k = derivs[-1]
                    break
                if abs(derivs[-1]) > threshold:
                    # a lower odd derivative already cleared the bar: not a
                    # clean even-contact fold at this tolerance
                    raise DegenerateFoldError(
                        f"derivative pattern at fold does not match any contact "
                        f"order <= {k_max} (|F^({order})|={abs(derivs[-1]):.3e}, "
                        f"lower orders {[f'{abs(v):.1e}' for v in derivs[:-1]]})")
        if k is None:
            raise DegenerateFoldError(
                f"all x-derivatives up to order {2 * k_max} below threshold "
                f"{threshold:.3e}: fold degenerate beyond k_max={k_max}")

    a_c = d2k / math.factorial(2 * k)
    b_c = deriv(lambda y: fast(x0, y), y0, 1)
    if abs(b_c) <= threshold:
        raise FoldConditionError(
            f"dF/dy = {b_c:.3e} vanishes at the fold (below {threshold:.3e})")
    sigma = 1 if a_c * b_c > 0 else -1
    nf = NormalFormParams(a_c=a_c, b_c=b_c, k=k, sigma=sigma, epsilon=epsilon)
    fold.k, fold.a_c, fold.b_c, fold.sigma = k, a_c, b_c, sigma
    return nf
