import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from acmtdc.control import (DroopSettings, adaptive_kf, adaptive_kv, coefficients, control_step,
                            frequency_adjustment, voltage_adjustment)
from acmtdc.errors import MarginExhausted, ZeroCoefficient
from acmtdc.netmodel import ControlMode

PD = ControlMode.PROPOSED_DROOP
AVD = ControlMode.ADAPTIVE_VOLTAGE_DROOP
AP = ControlMode.ACTIVE_POWER


def settings(mode=PD, **kw):
    base = dict(p_ref_mw=300.0, u_dc_ref_pu=1.0, f_ref_hz=60.0, p_max_mw=2000.0)
    base.update(kw)
    return DroopSettings(mode, **base)


def test_voltage_adjustment_examples():
    s = settings(k_v=0.004)
    assert voltage_adjustment(s, 1.0) == 0.0
    assert voltage_adjustment(s, 0.98) == pytest.approx(5.0, rel=1e-12)
    assert voltage_adjustment(s, 0.98) > 0
    with pytest.raises(ZeroCoefficient):
        voltage_adjustment(settings(k_v=0.0), 0.98)


def test_frequency_adjustment_examples():
    s = settings(k_f=0.0005)
    assert frequency_adjustment(s, 60.0) == 0.0
    assert frequency_adjustment(s, 59.9) == pytest.approx(200.0, rel=1e-9)
    out = control_step(s, 1.0, 59.9, 300.0)
    assert out.p_cmd_mw == pytest.approx(300.0 - 200.0, rel=1e-9)  # DC draw drops by 200 MW
    with pytest.raises(ZeroCoefficient):
        frequency_adjustment(settings(), 59.9)


def test_adaptive_kv_examples():
    s = settings(alpha_v=1.0, u_dc_max_pu=1.05)
    assert adaptive_kv(s, 0.0) == pytest.approx(2.5e-5, rel=1e-12)
    assert adaptive_kv(s, 1000.0) == pytest.approx(2 * adaptive_kv(s, 0.0), rel=1e-12)
    assert adaptive_kv(settings(alpha_v=2.0), 0.0) == pytest.approx(adaptive_kv(s, 0.0) / 2, rel=1e-12)


def test_adaptive_kf_examples():
    s = settings(alpha_f=1.0, delta_f_max_hz=0.5)
    assert adaptive_kf(s, 0.0) == pytest.approx(2.5e-4, rel=1e-12)
    assert adaptive_kf(settings(delta_f_max_hz=1.0), 0.0) == pytest.approx(2 * adaptive_kf(s, 0.0), rel=1e-12)
    # margin shrinking toward the floor makes k_f blow up and the response vanish
    ks = [adaptive_kf(s, p) for p in (0.0, 1500.0, 1900.0, 1979.0)]
    assert all(a < b for a, b in zip(ks, ks[1:]))
    with pytest.raises(MarginExhausted):
        adaptive_kf(s, 1990.0)
    with pytest.raises(MarginExhausted):
        adaptive_kv(s, -2000.0)


@given(st.floats(0.9, 1.1), st.floats(0.01, 0.2), st.floats(0.01, 10.0), st.floats(0.01, 10.0),
       st.floats(0.05, 2.0), st.floats(100.0, 5000.0), st.floats(-0.98, 0.98))
def test_adaptive_formulas_exact(u_ref, head, av, af, dfmax, pmax, frac):
    s = settings(u_dc_ref_pu=u_ref, u_dc_max_pu=1.0 + head + abs(u_ref - 1.0), alpha_v=av, alpha_f=af,
                 delta_f_max_hz=dfmax, p_max_mw=pmax)
    p = frac * pmax
    kv = ((s.u_dc_max_pu - 1.0) - abs(u_ref - 1.0)) / (av * (pmax - abs(p)))
    kf = dfmax / (af * (pmax - abs(p)))
    assert adaptive_kv(s, p) == pytest.approx(kv, rel=1e-12)
    assert adaptive_kf(s, p) == pytest.approx(kf, rel=1e-12)


def random_unsaturated(rng):
    while True:
        s = settings(
            PD, p_ref_mw=rng.uniform(-1500, 1500), u_dc_ref_pu=rng.uniform(0.97, 1.03),
            alpha_v=rng.uniform(0.5, 5), alpha_f=rng.uniform(0.01, 2),
            u_dc_max_pu=1.05 + rng.uniform(0, 0.05), delta_f_max_hz=rng.uniform(0.1, 1.0))
        u = s.u_dc_ref_pu + rng.uniform(-0.002, 0.002)
        f = 60.0 + rng.uniform(-0.2, 0.2)
        p_now = rng.uniform(-1800, 1800)
        out = control_step(s, u, f, p_now)
        if not out.saturated:
            return s, u, f, p_now, out


def test_droop_algebra_exact_on_random_inputs():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        s, u, f, p_now, out = random_unsaturated(rng)
        kv, kf = adaptive_kv(s, p_now), adaptive_kf(s, p_now)
        dp_v = (s.u_dc_ref_pu - u) / kv
        dp_f = (s.f_ref_hz - f) / kf
        assert out.dp_v_mw == dp_v
        assert out.dp_f_mw == dp_f
        assert out.p_cmd_mw == s.p_ref_mw + dp_v - dp_f
        assert abs(out.p_cmd_mw - s.p_ref_mw - out.dp_v_mw + out.dp_f_mw) <= 4 * np.finfo(float).eps * max(
            1.0, abs(out.p_cmd_mw), abs(s.p_ref_mw), abs(dp_v), abs(dp_f))


@given(st.floats(0.95, 1.05), st.floats(59.5, 60.5), st.floats(-1900, 1900))
def test_mode_reduction(u, f, p_now):
    proposed_no_f = control_step(settings(PD, k_f=math.inf), u, f, p_now)
    voltage_only = control_step(settings(AVD), u, f, p_now)
    assert proposed_no_f.p_cmd_mw == voltage_only.p_cmd_mw
    assert proposed_no_f.saturated == voltage_only.saturated
    frozen = control_step(settings(PD, k_v=math.inf, k_f=math.inf), u, f, p_now)
    fixed = control_step(settings(AP), u, f, p_now)
    assert frozen.p_cmd_mw == fixed.p_cmd_mw == 300.0


@given(st.floats(0.95, 1.05), st.floats(59.0, 61.0), st.floats(-1900, 1900))
def test_nominal_fixed_point_and_fixed_mode(u, f, p_now):
    for mode in (AP, AVD, PD):
        assert control_step(settings(mode), 1.0, 60.0, p_now).p_cmd_mw == 300.0
    assert control_step(settings(AP), u, f, p_now).p_cmd_mw == 300.0


def test_dc_voltage_mode_passes_through():
    out = control_step(settings(ControlMode.DC_VOLTAGE), 0.97, 59.0, 812.5)
    assert out.p_cmd_mw == 812.5


def test_combined_disturbance_signs():
    out = control_step(settings(PD), 0.99, 59.9, 300.0)
    assert out.dp_v_mw > 0 and out.dp_f_mw > 0
    assert out.p_cmd_mw == 300.0 + out.dp_v_mw - out.dp_f_mw


@given(st.floats(0.0, 1900.0), st.floats(0.0, 1900.0), st.floats(-0.01, 0.01), st.floats(-0.3, 0.3))
def test_adaptive_monotonicity(p1, p2, du, df):
    lo, hi = sorted((p1, p2))
    s = settings(PD)
    kv_lo, kf_lo = coefficients(s, lo)
    kv_hi, kf_hi = coefficients(s, hi)
    assert abs(du / kv_hi) <= abs(du / kv_lo)
    assert abs(df / kf_hi) <= abs(df / kf_lo)
    kv_neg, _ = coefficients(s, -hi)
    assert kv_neg == kv_hi


@given(st.floats(0.97, 1.03), st.floats(59.7, 60.3), st.floats(-1800, 1800), st.floats(10.0, 1000.0))
def test_scale_consistency(u, f, p_now, base):
    s = settings(PD)
    mw = control_step(s, u, f, p_now)
    pu = control_step(s.scaled(base), u, f, p_now / base)
    assert pu.p_cmd_mw * base == pytest.approx(mw.p_cmd_mw, rel=1e-9, abs=1e-9)


def test_saturation_clamps():
    s = settings(PD, p_ref_mw=1900.0)
    out = control_step(s, 0.9, 60.0, 1000.0)
    assert out.saturated and out.p_cmd_mw == 2000.0
    out = control_step(settings(PD, p_ref_mw=-1900.0), 1.1, 60.0, -1000.0)
    assert out.saturated and out.p_cmd_mw == -2000.0


def test_margin_exhausted_freezes_at_limit():
    out = control_step(settings(PD), 0.9, 59.0, 1995.0)
    assert out.saturated and out.p_cmd_mw == 2000.0
    assert out.dp_v_mw == 0.0 and out.dp_f_mw == 0.0


def test_alpha_must_be_positive():
    with pytest.raises(ValueError):
        settings(alpha_v=0.0)
