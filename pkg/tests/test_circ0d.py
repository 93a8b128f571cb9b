import math

import numpy as np
import pytest

from fiberkit.circ0d import (
    CHAMBERS,
    CirculationParams,
    CirculationState,
    ElastanceChamber,
    EmulatorFit,
    PVLoop,
    PVQoIs,
    ValveModel,
    calibrate_axb,
    chamber_pressure,
    default_state,
    emulator_fit,
    emulator_pressure,
    fit_edpvr,
    golden_section,
    parametric_emulator,
    pvloop_qois,
    raised_cosine,
    simulate,
    state_from_pressures,
    step,
    valve_resistance,
)
from fiberkit.exceptions import DataError, DegeneracyError, DivergenceError, ValidationError


@pytest.fixture(scope="module")
def baseline():
    return simulate(n_beats=30)


def synthetic_loops(T=0.2, dt=1e-4, amps=(1.0, 0.8, 1.2)):
    """PV samples generated exactly from the emulator form."""
    a, b, V0, E, V0s = 2.0, 60.0, 0.01, 5000.0, 0.008
    t = np.arange(0, len(amps) * T - 1e-12, dt)
    ph = np.mod(t, T) / T
    phi = np.where(ph < 0.5, np.sin(2 * np.pi * ph) ** 2, 0.0)
    beat = np.floor(t / T + 1e-9).astype(int)
    amp = np.asarray(amps)[beat]
    V = np.where(ph < 0.25, 0.03 + amp * 0.012 * np.cos(4 * np.pi * ph),
                 0.03 - amp * 0.012 * np.cos(np.pi * (ph - 0.25) / 0.75))
    P = (1 - phi) * a * np.expm1(b * (V - V0)) + phi * E * (V - V0s)
    return t, V, P, phi, (a, b, V0, E, V0s)


def test_chamber_pressure_examples():
    ch = ElastanceChamber(10.0, 50.0, 0.01, 0.3, 0.15, 0.0)
    for t in (0.0, 0.03, 0.1, 0.17):
        assert chamber_pressure(ch, 0.01, t, 0.2) == 0.0
    passive = ElastanceChamber(10.0, 50.0, 0.0, 0.3, 0.15, 0.5)
    assert passive.activation(0.0) == 0.0
    assert chamber_pressure(passive, 0.0492, 0.0, 0.2) == pytest.approx(0.492)
    with pytest.raises(ValidationError):
        chamber_pressure(ch, 0.02, 0.0, 0.0)


def test_atrial_activation_peak():
    la = CirculationParams().la
    phases = np.linspace(0.0, 1.0, 100001)[:-1]
    e = np.array([raised_cosine(p, la.t0, la.t_contraction, la.t_relaxation) for p in phases])
    assert phases[np.argmax(e)] == pytest.approx((0.85 + 0.36) % 1.0, abs=1e-4)
    assert e.max() == pytest.approx(1.0) and e.min() == 0.0


def test_periodic_forcing():
    lv = CirculationParams().lv
    for t in np.linspace(0.0, 0.2, 17):
        assert chamber_pressure(lv, 0.03, t) == chamber_pressure(lv, 0.03, t + 0.2) or \
            math.isclose(chamber_pressure(lv, 0.03, t), chamber_pressure(lv, 0.03, t + 0.2), rel_tol=1e-12)


def test_valve_examples():
    assert valve_resistance(1.0) == 7.5
    assert valve_resistance(-1.0) == 75000.0
    assert valve_resistance(0.0) == 75000.0
    with pytest.raises(ValidationError):
        ValveModel(10.0, 5.0)


def test_parameter_validation():
    with pytest.raises(ValidationError):
        ElastanceChamber(-1.0, 1.0, 0.0, 0.3, 0.3, 0.0)
    with pytest.raises(ValidationError):
        ElastanceChamber(1.0, 1.0, 0.0, 0.7, 0.5, 0.0)
    with pytest.raises(ValidationError):
        CirculationParams().with_values(**{"nope.R": 1.0})
    p = CirculationParams().with_values(**{"sys_ar.R": 1000.0, "lv.B": 0.0})
    assert p.sys_ar.R == 1000.0 and p.lv.B == 0.0 and p.rv.B == CirculationParams().rv.B
    with pytest.raises(ValidationError):
        CirculationState(np.ones(7))


def test_equilibrium_is_stationary():
    keys = {f"{c.lower()}.B": 0.0 for c in CHAMBERS}
    p = CirculationParams().with_values(**keys)
    p0 = 4.0
    chambers = [p.chamber(c).V0 + p0 / p.chamber(c).A for c in CHAMBERS]
    st = state_from_pressures(chambers, [p0] * 4, p)
    new = step(st, params=p)
    assert np.allclose(new.volumes, st.volumes, rtol=1e-14, atol=0)
    assert np.all(new.flows == 0)


def test_step_conserves_volume():
    st = default_state()
    for _ in range(200):
        new = step(st)
        assert abs(new.total_volume / st.total_volume - 1) < 1e-12
        st = new


def test_divergence_reports_compartment():
    with pytest.raises(DivergenceError) as exc:
        simulate(n_beats=2, dt=0.01)
    assert exc.value.compartment is not None and exc.value.time > 0
    with pytest.raises(ValidationError):
        simulate(n_beats=1, dt=3e-3)


def test_baseline_limit_cycle(baseline):
    assert baseline.limit_cycle_metric() < 1e-3
    assert baseline.volume_drift_per_beat() < 1e-9
    q = baseline.qois("LV")
    assert all(np.isfinite(q)) and 0 < q.EF < 1
    assert q.EDV > q.ESV


def test_two_initial_states_converge(baseline):
    p = CirculationParams()
    other = state_from_pressures([0.010, 0.030, 0.003, 0.025], [45.0, 18.0, 7.0, 5.0], p,
                                 total_volume=default_state(p).total_volume)
    res = simulate(p, n_beats=30, state=other)
    assert res.qois().EDV == pytest.approx(baseline.qois().EDV, rel=5e-3)


def test_no_active_elastance_no_pumping():
    keys = {f"{c.lower()}.B": 0.0 for c in CHAMBERS}
    # without forcing the loop only relaxes (venous time constant ~2.5 s)
    res = simulate(CirculationParams().with_values(**keys), n_beats=100, dt=1e-4)
    assert res.qois("LV").EF < 1e-3


def test_afterload_raises_esp(baseline):
    p = CirculationParams()
    high = simulate(p.with_values(**{"sys_ar.R": 2 * p.sys_ar.R}), n_beats=30)
    assert high.qois().ESP > baseline.qois().ESP


def test_qoi_examples():
    V = np.array([0.05, 0.05, 0.02, 0.02])
    P = np.array([2.0, 80.0, 80.0, 2.0])
    q = pvloop_qois(PVLoop(np.arange(4.0), V, P))
    assert tuple(q) == pytest.approx((0.05, 0.02, 2.0, 80.0, 0.6))
    with pytest.warns(RuntimeWarning, match="flat"):
        assert pvloop_qois(PVLoop(np.arange(3.0), np.full(3, 0.03), np.ones(3))).EF == 0.0
    with pytest.raises(ValidationError):
        pvloop_qois(PVLoop(np.arange(3.0), np.ones(3), np.ones(2)))


def test_emulator_fit_round_trip():
    t, V, P, phi, (a, b, V0, E, V0s) = synthetic_loops()
    fit = emulator_fit(t, V, P, 0.2)
    assert (fit.a, fit.b, fit.V0_ed) == pytest.approx((a, b, V0), rel=1e-4)
    assert (fit.E_es, fit.V0_es) == pytest.approx((E, V0s), rel=1e-4)
    got = np.array([fit.phi_at(x) for x in t])
    assert np.abs(got - phi).max() < 1e-6
    assert np.abs(emulator_pressure(V, t, fit) - P).max() < 1e-6 * np.abs(P).max()
    # fully relaxed at end diastole, fully contracted at the end-systolic corner
    assert fit.phi_at(t[np.argmax(V)]) == pytest.approx(0.0, abs=1e-6)
    assert np.all((fit.phi >= 0) & (fit.phi <= 1))


def test_emulator_degenerate_separation():
    # an ESPVR crossing the EDPVR inside the sampled volume range
    t, V, _, phi, (a, b, V0, E, _) = synthetic_loops()
    Vx = 0.042
    V0s = Vx - a * np.expm1(b * (Vx - V0)) / E
    P = (1 - phi) * a * np.expm1(b * (V - V0)) + phi * E * (V - V0s)
    with pytest.raises(DegeneracyError):
        emulator_fit(t, V, P, 0.2, diastolic_mask=phi == 0, sep_tol=0.5)


def test_edpvr_fit_and_linear_limit():
    V = np.linspace(0.02, 0.05, 30)
    assert fit_edpvr(V, 3.0 * np.expm1(40.0 * (V - 0.015))) == pytest.approx((3.0, 40.0, 0.015), rel=1e-6)
    a, b, V0 = fit_edpvr(V, 100.0 * (V - 0.01))
    assert a * b == pytest.approx(100.0) and V0 == pytest.approx(0.01)
    with pytest.raises(DataError):
        fit_edpvr(V, -V)


def make_fit(E_es, **kw):
    base = dict(a=2.0, b=60.0, V0_ed=0.01, E_es=E_es, V0_es=0.008,
                phase=np.array([0.0, 0.05, 0.1]), phi=np.array([0.0, 1.0, 0.0]))
    base.update(kw)
    return EmulatorFit(**base)


def test_emulator_pressure_identities():
    fit = make_fit(5000.0, phase=np.array([0.0, 0.05, 0.1, 0.15]), phi=np.array([0.0, 0.5, 1.0, 0.0]))
    V = 0.03
    assert emulator_pressure(V, 0.0, fit) == pytest.approx(fit.p_ed(V))
    assert emulator_pressure(V, 0.1, fit) == pytest.approx(fit.p_es(V))
    # half activation: the midpoint of P_ED = 2 and P_ES = 80
    f2 = make_fit(80.0 / (V - 0.008), a=2.0 / math.expm1(60.0 * (V - 0.01)),
                  phase=np.array([0.0, 0.05]), phi=np.array([0.5, 0.5]))
    assert f2.pressure(V, 0.01) == pytest.approx(41.0)
    assert emulator_pressure(V, 0.01, fit) == pytest.approx(fit.pressure(V, 0.01))
    assert EmulatorFit.from_dict(fit.to_dict()).to_dict() == fit.to_dict()


def test_parametric_endpoints():
    pA, pB = make_fit(4000.0), make_fit(7000.0)
    emu = parametric_emulator(pA, pB, 15e6, 30e6)
    V = np.linspace(0.01, 0.05, 7)
    for t in (0.0, 0.03, 0.05, 0.12):
        assert np.array_equal(emu(V, t, 15e6), emulator_pressure(V, t, pA))
        assert np.array_equal(emu(V, t, 30e6), emulator_pressure(V, t, pB))
        mid = 0.5 * (emulator_pressure(V, t, pA) + emulator_pressure(V, t, pB))
        assert np.allclose(emu(V, t, 22.5e6), mid, rtol=1e-14)
        assert emu.at(22.5e6)(0.03, t) == pytest.approx(emu(0.03, t, 22.5e6), rel=1e-14)
    with pytest.raises(ValidationError):
        parametric_emulator(pA, pB, 1.0, 1.0)


def test_golden_section():
    x, fx, _ = golden_section(lambda z: (z - 0.3) ** 2, 0.0, 1.0, 1e-9)
    assert x == pytest.approx(0.3, abs=1e-8) and fx < 1e-16


def cheap_qois(pressure):
    # pressure-based QoIs of a fixed volume trace: linear in the contractility
    return PVQoIs(0.05, 0.02, pressure(0.05, 0.0), pressure(0.02, 0.05), 0.6)


def test_calibrate_round_trip_and_bounds():
    pA, pB = make_fit(4000.0), make_fit(7000.0)
    emu = parametric_emulator(pA, pB, 15e6, 30e6)
    target = cheap_qois(emu.at(23e6))
    a, obj = calibrate_axb(target, pA, pB, 15e6, 30e6, qoi_fn=cheap_qois)
    assert a == pytest.approx(23e6, rel=1e-3)
    with pytest.warns(RuntimeWarning, match="bound"):
        a, _ = calibrate_axb(cheap_qois(emu.at(15e6)), pA, pB, 15e6, 30e6, qoi_fn=cheap_qois)
    assert a == pytest.approx(15e6, rel=1e-3)
    beyond = cheap_qois(parametric_emulator(pA, pB, 15e6, 30e6).at(40e6))
    with pytest.warns(RuntimeWarning, match="bound"):
        a, _ = calibrate_axb(beyond, pA, pB, 15e6, 30e6, qoi_fn=cheap_qois)
    assert a == 30e6
    with pytest.raises(ValidationError):
        calibrate_axb({"XYZ": 1.0}, pA, pB, 15e6, 30e6, qoi_fn=cheap_qois)
