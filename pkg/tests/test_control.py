import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from canard.control import (
    ControlledSystem,
    ControllerConfig,
    OverflowRegionError,
    RobustnessStatus,
    closed_loop_rhs,
    control_output,
    fast_control_shifted,
    fast_control_u,
    hamiltonian_classic,
    hamiltonian_delta,
    hamiltonian_general,
    hamiltonian_perturbed,
    joint_fast_slow,
    lyapunov_value,
    robustness_check,
    target_h,
)
from canard.integrator import IntegrationConfig, integrate
from canard.model import (
    DecisionParamsReduced,
    NormalFormParams,
    PerturbationSpec,
    State,
    classic_normal_form_params,
    eval_reduced,
    normal_form_system,
    reduced_system,
)

from conftest import FIG7

NF_QUARTIC = NormalFormParams(a_c=2.0, b_c=3.0, k=2, sigma=1, epsilon=0.01)
ORIGIN = (0.0, 0.0)


def test_classic_hamiltonian_origin_quarter():
    assert hamiltonian_classic(State(0.0, 0.0), 0.01) == 0.25


def test_classic_hamiltonian_maximal_canard_level():
    eps = 0.01
    for x in (-0.4, 0.0, 0.7):
        val = hamiltonian_classic(State(x, x * x - eps / 2), eps)
        assert val == pytest.approx(0.0, abs=1e-18)


def test_classic_hamiltonian_overflow_flag():
    with pytest.raises(OverflowRegionError):
        hamiltonian_classic(State(0.0, 4.0), 0.01)


def test_general_matches_classic():
    eps = 0.01
    nf = classic_normal_form_params(eps)
    for x, y in [(0.1, 0.02), (-0.3, 0.05), (0.0, -0.01)]:
        assert hamiltonian_general(State(x, y), nf) == pytest.approx(
            hamiltonian_classic(State(x, y), eps), rel=1e-14)


def test_general_hamiltonian_at_origin():
    assert hamiltonian_general(State(0.0, 0.0), NF_QUARTIC) == pytest.approx(
        -NF_QUARTIC.b_c / 4.0)


def test_general_hamiltonian_conserved_along_flow():
    # open-loop quartic normal form on a near-fold cycle (|H| ~ 5e-2, short
    # repelling ride, so numerical canard amplification stays negligible):
    # H constant along the orbit to 1e-6 relative over one full period
    system = normal_form_system(NF_QUARTIC)
    s0 = State(0.3, -0.02)
    h0 = hamiltonian_general(s0, NF_QUARTIC)
    assert abs(h0) > 1e-2
    cfg = IntegrationConfig(method="rk45-adaptive", t_end=400.0, rtol=1e-11,
                            atol=1e-13, sample_stride=10)
    traj = integrate(system, s0, cfg)
    d = np.hypot(traj.x - s0.x, traj.y - s0.y)
    assert d[50:].min() < 1e-2  # the orbit is a cycle and comes back
    for x, y in traj.states[:: max(1, len(traj.states) // 60)]:
        val = hamiltonian_general(State(float(x), float(y)), NF_QUARTIC)
        assert val == pytest.approx(h0, rel=1e-6, abs=0.0)


def test_level_set_through_fig4_start_is_bounded():
    # the level set through (-0.1, -0.3) is a bounded curve: its fast offset
    # dx^(2k) = (2 sigma eps H0 e^(-2dy/(sigma eps)) + eps b/2 - b dy)/a
    # turns negative both below the exponential turning depth and above the
    # apex, and the x-extent in between stays small
    nf = NF_QUARTIC
    s0 = State(-0.1, -0.3)
    h0 = hamiltonian_general(s0, nf)
    assert h0 < 0.0  # cycle-side level for b_c > 0

    def offset4(dy):
        expo = -2.0 * dy / (nf.sigma * nf.epsilon)
        hterm = 2.0 * nf.sigma * nf.epsilon * h0 * math.exp(expo) if expo < 700 else -math.inf
        return (hterm + nf.epsilon * nf.b_c / 2.0 - nf.b_c * dy) / nf.a_c

    assert offset4(-0.35) < 0.0          # closed below
    assert offset4(nf.epsilon) < 0.0     # closed above the apex
    widths = [offset4(dy) for dy in np.linspace(-0.29, 0.004, 200)]
    assert max(widths) < 1.0             # bounded x-extent (|dx| < 1)
    assert offset4(s0.y) >= (-s0.x) ** 4  # the start sits inside the curve


def test_perturbed_hamiltonian_identities():
    pert = PerturbationSpec(-0.5, 0.5)
    s = State(0.4, -0.2)
    hp = hamiltonian_perturbed(s, NF_QUARTIC, pert)
    hd = hamiltonian_delta(s, NF_QUARTIC, pert)
    h = hamiltonian_general(s, NF_QUARTIC)
    assert h == pytest.approx(hp - hd, rel=1e-12)
    zero = PerturbationSpec(0.0, 0.0)
    assert hamiltonian_perturbed(s, NF_QUARTIC, zero) == pytest.approx(h, rel=1e-15)
    assert hamiltonian_delta(s, NF_QUARTIC, zero) == 0.0


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-1.2, 1.2), y=st.floats(-2.5, 0.3),
       da=st.floats(-0.5, 0.5), db=st.floats(-0.5, 0.9))
def test_hamiltonian_decomposition_property(x, y, da, db):
    pert = PerturbationSpec(da, db)
    s = State(x, y)
    hp = hamiltonian_perturbed(s, NF_QUARTIC, pert)
    hd = hamiltonian_delta(s, NF_QUARTIC, pert)
    h = hamiltonian_general(s, NF_QUARTIC)
    assert h - (hp - hd) == pytest.approx(0.0, abs=max(1e-12 * abs(h), 1e-300))


def test_hamiltonian_delta_negative_on_perturbed_manifold():
    # with the robustness condition satisfied, H_delta is negative along the
    # perturbed critical manifold
    pert = PerturbationSpec(-0.5, 0.5)
    assert robustness_check(NF_QUARTIC, pert) is RobustnessStatus.SATISFIED
    ratio = abs((NF_QUARTIC.a_c + pert.delta_a) / (NF_QUARTIC.b_c + pert.delta_b))
    for x in (0.2, 0.5, 0.8):
        y = -NF_QUARTIC.sigma * ratio * x ** (2 * NF_QUARTIC.k)
        val = hamiltonian_delta(State(x, y), NF_QUARTIC, pert)
        assert val < 0.0


def test_target_h_reference_value():
    h, underflow = target_h(NF_QUARTIC, 7.0)
    assert not underflow
    assert h == pytest.approx(-2.46492e-305, rel=1e-4)


def test_target_h_sign_follows_b_c():
    nf_neg = NormalFormParams(a_c=-2.0, b_c=-3.0, k=2, sigma=1, epsilon=0.01)
    h_neg, _ = target_h(nf_neg, 7.0)
    h_pos, _ = target_h(NF_QUARTIC, 7.0)
    assert h_neg == -h_pos
    assert h_pos < 0.0


def test_target_h_underflow_flag():
    nf = NormalFormParams(a_c=2.0, b_c=3.0, k=2, sigma=1, epsilon=0.001)
    h, underflow = target_h(nf, 0.8)  # exponent 800: below double range
    assert underflow
    assert h == 0.0 and math.copysign(1.0, h) == -1.0
    h2, under2 = target_h(nf, 0.71)  # subnormal but representable
    assert not under2
    assert h2 != 0.0


def test_target_h_requires_positive_exponent():
    with pytest.raises(ValueError):
        target_h(NF_QUARTIC, 0.0)


def test_fast_control_vanishes_on_fold_fiber():
    h, _ = target_h(NF_QUARTIC, 7.0)
    for y in (-3.0, -0.3, 0.0, 0.004):
        assert fast_control_u(State(0.0, y), NF_QUARTIC, ORIGIN, 10.0, h, c_c=7.0) == 0.0


@settings(max_examples=50, deadline=None)
@given(y=st.floats(-3.4, 0.03))
def test_compatibility_property(y):
    h, _ = target_h(NF_QUARTIC, 7.0)
    assert fast_control_u(State(0.0, y), NF_QUARTIC, ORIGIN, 10.0, h, c_c=7.0) == 0.0


def test_fast_control_zero_on_maximal_canard_level():
    # with h = 0 the control vanishes identically on {H = 0}; binary-exact
    # parameters keep the level condition exact in floating point
    nf = NormalFormParams(a_c=2.0, b_c=4.0, k=2, sigma=1, epsilon=0.0078125)
    for x in (0.5, -0.5, 0.25):
        # b_c*y + a_c*x^4 - sigma*b_c*eps/2 == 0 exactly for these dyadics
        y = (nf.sigma * nf.epsilon * nf.b_c / 2.0 - nf.a_c * x ** 4) / nf.b_c
        assert nf.b_c * y + nf.a_c * x ** 4 - nf.sigma * nf.b_c * nf.epsilon / 2.0 == 0.0
        u = fast_control_u(State(x, y), nf, ORIGIN, 10.0, 0.0)
        assert u == 0.0


def test_fast_control_shifted_reduces_to_centered():
    nf = NormalFormParams(a_c=1.6422, b_c=0.10092, k=1, sigma=1, epsilon=0.01)
    origin = (0.6152, 28.665)
    h, _ = target_h(nf, 3.0)
    r = 1.0 / origin[0]
    s = State(0.66, 28.4)
    assert fast_control_shifted(s, nf, origin, 1500.0, h, r, c_c=3.0) == pytest.approx(
        fast_control_u(s, nf, origin, 1500.0, h, c_c=3.0), rel=1e-12)


def test_fast_control_shifted_at_one_over_r():
    nf = NormalFormParams(a_c=1.6422, b_c=0.10092, k=1, sigma=1, epsilon=0.01)
    origin = (0.6152, 28.665)
    h, _ = target_h(nf, 3.0)
    r = 1.65
    s = State(1.0 / r, 28.5)
    # the gain factor and the shifted parabola term both vanish at x = 1/r
    expected = -nf.a_c * (s.x - origin[0]) ** 2
    assert fast_control_shifted(s, nf, origin, 1500.0, h, r, c_c=3.0) == pytest.approx(
        expected, rel=1e-12)


def test_joint_fast_slow_constant_v():
    nf = NormalFormParams(a_c=1.6422, b_c=0.10092, k=1, sigma=1, epsilon=0.01)
    origin = (0.6152, 28.665)
    h, _ = target_h(nf, 3.0)
    _, v = joint_fast_slow(State(0.8, 28.0), nf, origin, 1000.0, h, 1.65, c_c=3.0)
    assert v == pytest.approx(0.01508, abs=1e-10)
    # x* = 1/r kills the slow input
    _, v0 = joint_fast_slow(State(0.8, 28.0), nf, (1.0 / 1.65, 28.665), 1000.0, h,
                            1.65, c_c=3.0)
    assert v0 == pytest.approx(0.0, abs=1e-15)
    # suppressed on the invariant line
    _, v_floor = joint_fast_slow(State(0.8, 0.0), nf, origin, 1000.0, h, 1.65, c_c=3.0)
    assert v_floor == 0.0


def test_robustness_check_paper_cases():
    nf = NormalFormParams(a_c=1.6423, b_c=0.100927, k=1, sigma=1, epsilon=0.01)
    assert robustness_check(nf, PerturbationSpec(0.116412, 0.00743007)) \
        is RobustnessStatus.SATISFIED
    assert robustness_check(NF_QUARTIC, PerturbationSpec(-0.5, 0.5)) \
        is RobustnessStatus.SATISFIED
    # boundary equality is not strict inequality
    ratio = abs(nf.a_c / nf.b_c)
    db = 0.01
    assert robustness_check(nf, PerturbationSpec(db * ratio, db)) \
        is RobustnessStatus.VIOLATED
    assert robustness_check(nf, PerturbationSpec(0.1, 0.0)) \
        is RobustnessStatus.NOT_APPLICABLE
    assert robustness_check(nf, PerturbationSpec(0.1, -0.2)) \
        is RobustnessStatus.NOT_APPLICABLE


def test_lyapunov_value_zero_on_target_level():
    s = State(0.7, -0.5)
    h_here = hamiltonian_general(s, NF_QUARTIC)
    assert lyapunov_value(s, NF_QUARTIC, ORIGIN, h_here) == 0.0
    assert lyapunov_value(s, NF_QUARTIC, ORIGIN, h_here + 1e-3) > 0.0


def test_closed_loop_off_equals_open_loop():
    p = DecisionParamsReduced(**FIG7)
    nf = NormalFormParams(a_c=1.6422, b_c=0.10092, k=1, sigma=1, epsilon=p.epsilon)
    cfg = ControllerConfig(nf=nf, x_star=0.6152, y_star=28.665, B_c=1000.0,
                           c_c=3.0, mode="off", r=p.r)
    s = State(0.8, 28.0)
    assert closed_loop_rhs(s, reduced_system(p), cfg) == eval_reduced(s, p)


def test_controller_region_gating():
    nf = NormalFormParams(a_c=1.6422, b_c=0.10092, k=1, sigma=1, epsilon=0.01)
    cfg = ControllerConfig(nf=nf, x_star=0.6152, y_star=28.665, B_c=1000.0,
                           c_c=3.0, mode="fast_slow", r=1.65)
    u, v, active = cfg.control(0.0, 0.6152 + 0.6, 28.6)   # outside |dx| radius
    assert (u, v, active) == (0.0, 0.0, False)
    u, v, active = cfg.control(0.0, 0.62, 28.665 + 4.0)   # outside exponent band
    assert (u, v, active) == (0.0, 0.0, False)
    _, _, active = cfg.control(0.0, 0.62, 28.6)
    assert active


def test_controller_schedule_resolution():
    nf = NormalFormParams(a_c=1.6422, b_c=0.10092, k=1, sigma=1, epsilon=0.01)
    cfg = ControllerConfig(nf=nf, x_star=0.6152, y_star=28.665, B_c=1000.0,
                           c_c=3.0, mode="off", r=1.65,
                           schedule=[(10.0, "fast_slow"), (20.0, "off")])
    assert cfg.mode_at(5.0) == "off"
    assert cfg.mode_at(10.0) == "fast_slow"
    assert cfg.mode_at(19.9) == "fast_slow"
    assert cfg.mode_at(25.0) == "off"


def test_controller_config_validation():
    nf = NormalFormParams(a_c=1.0, b_c=1.0, k=1, sigma=1, epsilon=0.01)
    with pytest.raises(ValueError):
        ControllerConfig(nf=nf, x_star=0.0, y_star=0.0, B_c=-1.0, c_c=3.0)
    with pytest.raises(ValueError):
        ControllerConfig(nf=nf, x_star=0.0, y_star=0.0, B_c=1.0, c_c=3.0,
                         mode="fast_slow", r=None)
    with pytest.raises(ValueError):
        ControllerConfig(nf=nf, x_star=0.0, y_star=0.0, B_c=1.0, c_c=3.0,
                         schedule=[(5.0, "off"), (5.0, "fast_only")])


def test_control_output_reports_level_error():
    nf = NF_QUARTIC
    cfg = ControllerConfig(nf=nf, x_star=0.0, y_star=0.0, B_c=10.0, c_c=7.0,
                           mode="fast_only", r=None, x_radius=3.0)
    out = control_output(State(0.4, -0.2), cfg)
    expected_h = hamiltonian_general(State(0.4, -0.2), nf)
    assert out.H == pytest.approx(expected_h, rel=1e-12)
    assert out.H_err == pytest.approx(expected_h - cfg.h, rel=1e-12)


def test_quartic_closed_loop_lyapunov_decay_short():
    # the level error contracts along the closed loop (sampled decay)
    cfg = ControllerConfig(nf=NF_QUARTIC, x_star=0.0, y_star=0.0, B_c=10.0,
                           c_c=7.0, mode="fast_only", r=None, x_radius=3.0)
    closed = ControlledSystem(normal_form_system(NF_QUARTIC), [cfg])
    icfg = IntegrationConfig(method="rk45-adaptive", t_end=60.0, rtol=1e-10,
                             atol=1e-12, sample_stride=5)
    traj = integrate(closed, State(1.25, -0.3), icfg)
    herr = np.abs(traj.hamiltonian - cfg.h)
    finite = np.isfinite(herr)
    L = 0.5 * herr[finite] ** 2
    dL = np.diff(L)
    thr = 10.0 * (icfg.rtol * np.fmax(L[:-1], L[1:]) + icfg.atol)
    assert int(np.sum(dL > thr)) == 0
