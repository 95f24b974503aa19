import math

import pytest

from canard.model import DecisionParamsFull, DecisionParamsReduced

# Two-fold parameter set used throughout (matches the runs with r = 1.65).
FIG7 = dict(alpha=2.0, beta=0.75, gamma=0.5, b=30.0, c=2.5, d=1.18, r=1.65, epsilon=0.01)

# High-precision fold data for FIG7, frozen from an mpmath Newton solve of
# {F = 0, dF/dx = 0} (40 digits); regression anchors for the solvers.
F1_X = 0.616285509758
F1_Y = 28.6653651301
F1_AC = 1.642177915
F1_BC = 0.1009239713
F2_X = 0.977337600678
F2_Y = 25.5924817212
F2_AC = -8.367961596
F2_BC = 0.008399981778

# Same solve after beta -> beta+0.05, gamma -> gamma-0.001.
F1P_X = 0.602546134301
F1P_Y = 28.5963787351
F1P_AC = 1.7585573
F1P_BC = 0.10835388


@pytest.fixture
def fig7_params() -> DecisionParamsReduced:
    return DecisionParamsReduced(**FIG7)


@pytest.fixture
def fig7_perturbed_params() -> DecisionParamsReduced:
    vals = dict(FIG7)
    vals["beta"] += 0.05
    vals["gamma"] -= 0.001
    return DecisionParamsReduced(**vals)


@pytest.fixture
def asymptote_params() -> DecisionParamsFull:
    # mixed unconditional-exploration setting
    return DecisionParamsFull(alpha1=0.9, alpha2=2.5, beta1=4.0, beta2=2.0,
                              gamma1=3.0, gamma2=2.0, eta1=0.1, eta2=0.13,
                              b=30.0, c=1.5, d=1.1, r=1.4, epsilon=0.001)


def approx_rel(value, expected, rel):
    return math.isclose(value, expected, rel_tol=rel, abs_tol=0.0)
