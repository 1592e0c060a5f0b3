import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qjump import physics as ph
from qjump.physics import CavityParams, DetuningPoint

P = CavityParams.bonn()


def amplitude_oracle(p, delta, g):
    # complex field transmission, probe on the empty-cavity resonance
    t = p.kappa / (p.kappa + g**2 / (p.gamma - 1j * delta))
    return abs(t) ** 2


def test_unit_conversion_round_trip():
    assert ph.mhz(1.0) == pytest.approx(2 * np.pi * 1e6)
    assert ph.to_mhz(ph.mhz(13.1)) == pytest.approx(13.1)


def test_bonn_constants():
    assert ph.to_mhz(P.g0) == pytest.approx(13.1)
    assert ph.to_mhz(P.kappa) == pytest.approx(0.4)
    assert ph.to_mhz(P.gamma) == pytest.approx(2.6)
    assert P.waist == 23e-6
    assert P.cooperativity == pytest.approx(13.1**2 / (2 * 0.4 * 2.6))


@pytest.mark.parametrize("field", ["g0", "kappa", "gamma", "waist"])
def test_cavity_params_reject_nonpositive(field):
    kw = dict(g0=1.0, kappa=1.0, gamma=1.0, waist=1.0)
    kw[field] = 0.0
    with pytest.raises(ValueError):
        CavityParams(**kw)


def test_negative_coupling_rejected():
    with pytest.raises(ValueError):
        DetuningPoint(1.0, -1.0)


def test_empty_cavity_is_one():
    for delta in (0.0, ph.mhz(5.0), ph.mhz(-300.0)):
        assert ph.transmission_one_atom(P, DetuningPoint(delta, 0.0)) == 1.0


def test_frozen_one_atom_value():
    # g = 9 MHz, delta = 38 MHz, hand-evaluated: 232.12 / 6961.7
    t = ph.transmission_one_atom(P, DetuningPoint(ph.mhz(38.0), ph.mhz(9.0)))
    assert t == pytest.approx(0.033343, abs=2e-6)
    assert t == pytest.approx(amplitude_oracle(P, ph.mhz(38.0), ph.mhz(9.0)), rel=1e-12)


def test_zero_detuning_reduces_to_cooperativity_form():
    g = ph.mhz(9.0)
    two_c1 = g**2 / (P.kappa * P.gamma)
    t = ph.transmission_one_atom(P, DetuningPoint(0.0, g))
    assert t == pytest.approx(1 / (1 + two_c1) ** 2, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(delta=st.floats(-500, 500), g=st.floats(0, 30))
def test_one_atom_matches_amplitude_oracle(delta, g):
    d, gg = ph.mhz(delta), ph.mhz(g)
    t = ph.transmission_one_atom(P, DetuningPoint(d, gg))
    assert 0.0 <= t <= 1.0 + 1e-15
    assert t == pytest.approx(amplitude_oracle(P, d, gg), rel=1e-10, abs=1e-300)


@settings(max_examples=100, deadline=None)
@given(delta=st.floats(1, 500), g1=st.floats(0, 20), g2=st.floats(0, 20))
def test_one_atom_decreases_with_coupling(delta, g1, g2):
    lo, hi = sorted((g1, g2))
    d = ph.mhz(delta)
    assert ph.transmission_one_atom(P, DetuningPoint(d, ph.mhz(hi))) <= ph.transmission_one_atom(
        P, DetuningPoint(d, ph.mhz(lo))) + 1e-15


def test_one_atom_is_even_in_detuning():
    g = ph.mhz(9.0)
    d = ph.mhz(np.linspace(1, 200, 50))
    assert np.allclose(ph.transmission_one_atom(P, DetuningPoint(d, g)),
                       ph.transmission_one_atom(P, DetuningPoint(-d, g)), rtol=0, atol=1e-15)


def test_array_input_returns_array():
    d = DetuningPoint(ph.mhz(np.array([10.0, 20.0])), ph.mhz(9.0))
    out = ph.transmission_one_atom(P, d)
    assert isinstance(out, np.ndarray) and out.shape == (2,)
    assert isinstance(ph.transmission_one_atom(P, DetuningPoint(1.0, 1.0)), float)


def dispersive_point(x):
    # choose g so that g^2/(kappa*delta) = x at delta = 100 MHz
    delta = ph.mhz(100.0)
    return DetuningPoint(delta, np.sqrt(x * P.kappa * delta))


def test_dispersive_at_optimum():
    d = dispersive_point(1 / np.sqrt(2))
    assert ph.transmission_dispersive(P, d, 1) == pytest.approx(2 / 3, abs=1e-12)
    assert ph.transmission_dispersive(P, d, 2) == pytest.approx(1 / 3, abs=1e-12)
    assert ph.level_difference(P, d) == pytest.approx(1 / 3, abs=1e-12)


def test_dispersive_at_unit_ratio():
    d = dispersive_point(1.0)
    assert ph.transmission_dispersive(P, d, 1) == pytest.approx(0.5, abs=1e-12)
    assert ph.transmission_dispersive(P, d, 2) == pytest.approx(0.2, abs=1e-12)


def test_dispersive_decoupled():
    d = DetuningPoint(ph.mhz(50.0), 0.0)
    assert ph.transmission_dispersive(P, d, 1) == 1.0
    assert ph.transmission_dispersive(P, d, 2) == 1.0
    assert ph.level_difference(P, d) == 0.0


def test_dispersive_errors():
    with pytest.raises(ValueError):
        ph.transmission_dispersive(P, DetuningPoint(0.0, 1.0))
    with pytest.raises(ValueError):
        ph.transmission_dispersive(P, DetuningPoint(1.0, 1.0), n_atoms=3)


@settings(max_examples=200, deadline=None)
@given(x=st.floats(0, 50))
def test_level_difference_bounded_by_one_third(x):
    assert ph.level_difference(P, dispersive_point(x)) <= 1 / 3 + 1e-12


def test_coupling_at_offset():
    g = ph.mhz(9.0)
    assert ph.coupling_at_offset(P, g, 0.0) == g
    assert ph.coupling_at_offset(P, g, P.waist) == pytest.approx(g / np.e)
    assert ph.to_mhz(ph.coupling_at_offset(P, g, 23.1e-6)) == pytest.approx(3.28, abs=0.01)


def test_optimal_offset_frozen_and_consistent():
    g, delta = ph.mhz(9.0), ph.mhz(38.0)
    dy = ph.optimal_offset(P, g, delta)
    assert dy * 1e6 == pytest.approx(23.1, abs=0.05)
    geff = ph.coupling_at_offset(P, g, dy)
    assert geff**2 == pytest.approx(P.kappa * delta / np.sqrt(2), rel=1e-12)


def test_optimal_offset_threshold():
    g = ph.mhz(9.0)
    threshold = np.sqrt(2) * g**2 / P.kappa
    assert ph.to_mhz(threshold) == pytest.approx(286.38, abs=0.01)
    assert ph.optimal_offset(P, g, threshold) == 0.0
    assert ph.optimal_offset(P, g, 1.01 * threshold) == 0.0
    assert ph.optimal_offset(P, g, 0.99 * threshold) > 0.0
    assert np.all(ph.optimal_offset(P, g, ph.mhz(np.array([300.0, 410.0]))) == 0.0)


def test_optimal_offset_rejects_nonpositive_detuning():
    with pytest.raises(ValueError):
        ph.optimal_offset(P, ph.mhz(9.0), 0.0)


def test_optimal_offset_maximizes_dispersive_difference():
    g, delta = ph.mhz(9.0), ph.mhz(60.0)
    dys = np.linspace(0, 40e-6, 4001)
    vals = ph.level_difference(P, DetuningPoint(delta, ph.coupling_at_offset(P, g, dys)))
    assert dys[np.argmax(vals)] == pytest.approx(ph.optimal_offset(P, g, delta), abs=dys[1])


def test_transmission_levels_default_two_atom_coupling():
    g, delta = ph.mhz(5.0), ph.mhz(40.0)
    lv = ph.transmission_levels(P, delta, g)
    assert lv.t0 == 1.0
    assert lv.t2 == pytest.approx(amplitude_oracle(P, delta, np.sqrt(2) * g), rel=1e-12)
    assert lv.as_array().shape == (3,)
    assert lv.t0 > lv.t1 > lv.t2
