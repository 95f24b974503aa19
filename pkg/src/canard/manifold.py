"""Critical manifold of the decision model: roots, stability, folds, asymptotes.

For any parameter set with positive switching rates and eta < 1 the fast
field F is strictly increasing in y, so the critical manifold {F = 0} is the
graph of a single function y = Y(x) over the open x-window between the
asymptotes.  Fold points are the interior extrema of that graph, i.e. the
solutions of {F = 0, dF/dx = 0}.  ``find_folds`` samples the graph on a fine
x-grid (solving for the profit difference rather than y directly, which
keeps the bisection window parameter-independent), then refines each sign
change of dF/dx along the graph by bisection with a Newton-in-y inner solve.

``manifold_roots`` keeps the complementary per-y view: all x-roots at a
fixed stock level with their layer stability, which is what phase portraits
and the layer-flow checks need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import DecisionParamsFull, DecisionParamsReduced, sigmoid

__all__ = [
    "FoldPoint",
    "ManifoldSample",
    "Asymptotes",
    "FoldSearchError",
    "LooseParams",
    "manifold_roots",
    "find_folds",
    "asymptotes",
    "reduced_slow_flow",
    "manifold_graph",
    "scan_window",
    "fast_field_value",
    "fast_field_partials",
]

# Margin keeping the root scan away from the asymptotes and the cost pole.
EDGE_MARGIN = 1e-6
ROOT_TOL = 1e-12


class FoldSearchError(RuntimeError):
    """A detected fold bracket could not be refined to tolerance."""


@dataclass
class FoldPoint:
    """Non-hyperbolic point of the critical manifold.

    Expansion data (k, a_c, b_c, sigma) is attached by the expansion module;
    a freshly located fold carries only coordinates and residuals.
    """

    x_star: float
    y_star: float
    k: int | None = None
    a_c: float | None = None
    b_c: float | None = None
    sigma: int | None = None
    residual_f: float = math.nan
    residual_fx: float = math.nan


@dataclass(frozen=True)
class ManifoldSample:
    y: float
    roots: list  # of (x, "attracting" | "repelling")


@dataclass(frozen=True)
class Asymptotes:
    x_L: float
    x_R: float


@dataclass(frozen=True)
class LooseParams:
    """Full-model parameter bundle without range validation.

    Sweep grids legitimately touch boundary values (alpha = 0, gamma = 0, ...)
    that the model dataclasses reject for simulation use; manifold geometry is
    still well defined there.
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
    r: float = math.nan
    epsilon: float = math.nan

    @classmethod
    def from_reduced_values(cls, alpha, beta, gamma, b, c, d,
                            r=math.nan, epsilon=math.nan) -> "LooseParams":
        return cls(alpha1=alpha, alpha2=alpha, beta1=beta, beta2=beta,
                   gamma1=gamma, gamma2=1.0, eta1=0.0, eta2=0.0,
                   b=b, c=c, d=d, r=r, epsilon=epsilon)


def _as_full(params):
    if isinstance(params, DecisionParamsReduced):
        return params.to_full()
    if isinstance(params, (DecisionParamsFull, LooseParams)):
        return params
    raise TypeError(f"expected decision-model parameters, got {type(params)!r}")


def asymptotes(params) -> Asymptotes:
    """Limiting shares x_L (y -> -inf) and x_R (y -> +inf) of the manifold."""
    p = _as_full(params)
    den_l = p.gamma1 * p.eta1 + p.gamma2
    den_r = p.gamma1 + p.gamma2 * p.eta2
    if den_l <= 0 or den_r <= 0:
        raise ValueError("asymptote denominators must be positive")
    return Asymptotes(x_L=p.gamma1 * p.eta1 / den_l, x_R=p.gamma1 / den_r)


def scan_window(params) -> tuple[float, float]:
    """x-interval searched for manifold roots: asymptotes shrunk clear of the pole."""
    p = _as_full(params)
    asym = asymptotes(p)
    lo = asym.x_L + EDGE_MARGIN
    hi = min(asym.x_R, p.d - EDGE_MARGIN) - EDGE_MARGIN
    if hi <= lo:
        raise ValueError("empty scan window: check asymptotes and pole location")
    return lo, hi


# -- scalar field core -------------------------------------------------------

def _partials_delta(p: DecisionParamsFull, x: float, delta: float):
    """(F, dF/dx, dF/dy) with the profit difference as the free slot."""
    s1 = sigmoid(p.beta1 * (p.alpha1 + delta))
    s2 = sigmoid(p.beta2 * (p.alpha2 - delta))
    gain_in = p.eta1 + (1.0 - p.eta1) * s1
    gain_out = p.eta2 + (1.0 - p.eta2) * s2
    F = p.gamma1 * (1.0 - x) * gain_in - p.gamma2 * x * gain_out
    Fy = (p.gamma1 * (1.0 - x) * (1.0 - p.eta1) * p.beta1 * s1 * (1.0 - s1)
          + p.gamma2 * x * (1.0 - p.eta2) * p.beta2 * s2 * (1.0 - s2))
    Fx = -(p.gamma1 * gain_in + p.gamma2 * gain_out) + (p.c / (p.d - x) ** 2) * Fy
    return F, Fx, Fy


def fast_field_value(params, x: float, y: float) -> float:
    """Scalar F(x, y, 0) for either parameter flavour."""
    p = _as_full(params)
    return _partials_delta(p, x, y + p.c / (p.d - x) - p.b)[0]


def fast_field_partials(params, x: float, y: float) -> tuple[float, float, float]:
    """(F, dF/dx, dF/dy) at a point, from the closed-form derivatives."""
    p = _as_full(params)
    return _partials_delta(p, x, y + p.c / (p.d - x) - p.b)


# -- vectorised graph sampling ------------------------------------------------

def _sig_arr(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _field_arrays(p: DecisionParamsFull, x: np.ndarray, delta: np.ndarray):
    """Vectorised (F, dF/dx, dF/dy); mirrors _partials_delta exactly."""
    s1 = _sig_arr(p.beta1 * (p.alpha1 + delta))
    s2 = _sig_arr(p.beta2 * (p.alpha2 - delta))
    gain_in = p.eta1 + (1.0 - p.eta1) * s1
    gain_out = p.eta2 + (1.0 - p.eta2) * s2
    F = p.gamma1 * (1.0 - x) * gain_in - p.gamma2 * x * gain_out
    Fy = (p.gamma1 * (1.0 - x) * (1.0 - p.eta1) * p.beta1 * s1 * (1.0 - s1)
          + p.gamma2 * x * (1.0 - p.eta2) * p.beta2 * s2 * (1.0 - s2))
    Fx = -(p.gamma1 * gain_in + p.gamma2 * gain_out) + (p.c / (p.d - x) ** 2) * Fy
    return F, Fx, Fy


def _graph_delta(p: DecisionParamsFull, xs: np.ndarray, iters: int = 80):
    """Per-x profit-difference value on the manifold, by monotone bisection.

    Returns (delta, valid): entries where F never changes sign across delta
    (eta = 1 or degenerate rates) are flagged invalid.
    """
    lo = np.full_like(xs, -8.0)
    hi = np.full_like(xs, 8.0)
    for _ in range(60):
        flo = _field_arrays(p, xs, lo)[0]
        fhi = _field_arrays(p, xs, hi)[0]
        bad = np.sign(flo) == np.sign(fhi)
        if not bad.any():
            break
        lo[bad] *= 2.0
        hi[bad] *= 2.0
        if -lo.min() > 1e15:
            break
    flo = _field_arrays(p, xs, lo)[0]
    fhi = _field_arrays(p, xs, hi)[0]
    valid = np.sign(flo) != np.sign(fhi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = _field_arrays(p, xs, mid)[0]
        go_lo = np.sign(fm) == np.sign(flo)
        lo = np.where(go_lo, mid, lo)
        flo = np.where(go_lo, fm, flo)
        hi = np.where(go_lo, hi, mid)
    return 0.5 * (lo + hi), valid


def manifold_graph(params, xs: np.ndarray) -> np.ndarray:
    """y = Y(x) on the manifold for each x (NaN where no root exists)."""
    p = _as_full(params)
    xs = np.asarray(xs, dtype=float)
    delta, valid = _graph_delta(p, xs)
    y = delta - p.c / (p.d - xs) + p.b
    return np.where(valid, y, np.nan)


# -- per-y root view ----------------------------------------------------------

def manifold_roots(y: float, params, n_cells: int = 2000) -> ManifoldSample:
    """All x-roots of F(., y, 0) = 0 in the scan window, tagged by stability.

    Sign-change scan over a uniform grid followed by bisection to
    |F| <= 1e-12; attracting where dF/dx < 0.
    """
    p = _as_full(params)
    lo, hi = scan_window(p)
    xs = np.linspace(lo, hi, n_cells + 1)
    F = _field_arrays(p, xs, y + p.c / (p.d - xs) - p.b)[0]
    roots = []

    def f_at(x: float) -> float:
        return fast_field_value(p, x, y)

    sgn = np.sign(F)
    for i in np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]:
        a, bnd = float(xs[i]), float(xs[i + 1])
        fa = float(F[i])
        for _ in range(200):
            m = 0.5 * (a + bnd)
            fm = f_at(m)
            if abs(fm) <= ROOT_TOL:
                a = bnd = m
                break
            if (fm > 0) == (fa > 0):
                a, fa = m, fm
            else:
                bnd = m
        root = 0.5 * (a + bnd)
        _, fx, _ = fast_field_partials(p, root, y)
        roots.append((root, "attracting" if fx < 0 else "repelling"))
    for i in np.nonzero(F == 0.0)[0]:  # exact grid hits
        root = float(xs[i])
        if not any(abs(root - r) < 1e-9 for r, _ in roots):
            _, fx, _ = fast_field_partials(p, root, y)
            roots.append((root, "attracting" if fx < 0 else "repelling"))
    roots.sort(key=lambda item: item[0])
    return ManifoldSample(y=float(y), roots=roots)


# -- fold location ------------------------------------------------------------

def _delta_on_graph(p: DecisionParamsFull, x: float, guess: float) -> float:
    """Manifold delta at one x: safeguarded Newton on the monotone field."""
    d = guess
    lo, hi = -math.inf, math.inf
    f, _, fy = _partials_delta(p, x, d)
    for _ in range(100):
        if abs(f) < 1e-14:
            return d
        if f > 0:
            hi = min(hi, d)
        else:
            lo = max(lo, d)
        step = f / fy if fy > 0 else math.nan
        d_new = d - step
        if not math.isfinite(d_new) or not (lo < d_new < hi):
            if math.isinf(lo) or math.isinf(hi):
                d_new = d - math.copysign(max(1.0, abs(d)), f)
            else:
                d_new = 0.5 * (lo + hi)
        d = d_new
        f, _, fy = _partials_delta(p, x, d)
    return d


def find_folds(params, y_range=None, n_grid: int = 2000) -> list[FoldPoint]:
    """Locate all fold points {F = 0, dF/dx = 0}, sorted by x.

    Every sign change of dF/dx along the sampled manifold graph brackets one
    fold, refined by bisection in x with the graph re-solved at each probe.
    ``y_range`` filters the result to folds with y* inside it; ``None`` keeps
    everything, including physically meaningless y* < 0.
    """
    p = _as_full(params)
    if p.gamma1 <= 0 or p.gamma2 <= 0:
        return []  # one-sided switching: the fast field has a fixed sign interior
    lo, hi = scan_window(p)
    xs = np.linspace(lo, hi, n_grid)
    delta, valid = _graph_delta(p, xs)
    Fx = _field_arrays(p, xs, delta)[1]
    Fx = np.where(valid, Fx, np.nan)
    sgn = np.sign(Fx)
    folds: list[FoldPoint] = []
    idx = np.nonzero((sgn[:-1] * sgn[1:] < 0) & valid[:-1] & valid[1:])[0]
    for i in idx:
        xa, xb = float(xs[i]), float(xs[i + 1])
        d_guess = float(delta[i])

        def slope(x: float, guess: float) -> tuple[float, float]:
            dd = _delta_on_graph(p, x, guess)
            _, fx, _ = _partials_delta(p, x, dd)
            return fx, dd

        fa, d_guess = slope(xa, d_guess)
        for _ in range(80):
            xm = 0.5 * (xa + xb)
            if xm == xa or xm == xb:
                break
            fm, d_guess = slope(xm, d_guess)
            if (fm > 0) == (fa > 0):
                xa, fa = xm, fm
            else:
                xb = xm
        x_star = 0.5 * (xa + xb)
        dd = _delta_on_graph(p, x_star, d_guess)
        y_star = dd - p.c / (p.d - x_star) + p.b
        f, fx, _ = fast_field_partials(p, x_star, y_star)
        if abs(f) > 1e-10 or abs(fx) > 1e-6:
            raise FoldSearchError(
                f"fold refinement stalled near x={x_star:.6f}: |F|={abs(f):.2e}, "
                f"|dF/dx|={abs(fx):.2e}")
        folds.append(FoldPoint(x_star=float(x_star), y_star=float(y_star),
                               residual_f=abs(f), residual_fx=abs(fx)))
    folds.sort(key=lambda fp: fp.x_star)
    if y_range is not None:
        y_lo, y_hi = y_range
        folds = [fp for fp in folds if y_lo <= fp.y_star <= y_hi]
    return folds


def reduced_slow_flow(params, y: float, branch_x: float) -> float:
    """Slow flow on the manifold branch through (branch_x, y): y*(1 - r*x)."""
    p = _as_full(params)
    return y * (1.0 - p.r * branch_x)
