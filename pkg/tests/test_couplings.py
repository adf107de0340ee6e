import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionqed.chain import CA40_MASS_AMU, ChainConfig, phonon_spectra
from ionqed.couplings import (
    CouplingReport,
    FieldToneConfig,
    SpinToneConfig,
    com_occupation_check,
    coupling_statistics,
    design_couplings,
    design_field_coupling,
    fit_power_law,
    invert_model_sign,
    match_p2_term,
    residual_dipole_matrix,
    spin_spin_matrix,
)
from ionqed.errors import ResonanceError

from conftest import reference_chain

FIELD = FieldToneConfig(15.4e3, 0.41e3, 0.0)
COM_TONE = (139e3, 14e3)
FAR_TONE = (1.0e6, 1.7e6)


def test_reference_field_coupling(ref_spectra):
    g, wc, w0 = design_field_coupling(FIELD, ref_spectra["x"])
    assert wc == pytest.approx(205.0) and w0 == pytest.approx(205.0)
    eta = ref_spectra["x"].lamb_dicke[0]
    np.testing.assert_allclose(g, eta * 15.4e3 / np.sqrt(10), rtol=1e-9)
    assert g[0] / wc == pytest.approx(1.0, abs=0.05)


def test_equal_detunings_give_zero_omega_0(ref_spectra):
    _, _, w0 = design_field_coupling(FieldToneConfig(15.4e3, 300.0, 300.0), ref_spectra["x"])
    assert w0 == 0.0


def test_field_coupling_linear_in_profile(ref_spectra):
    w = np.linspace(0.5, 1.5, 10)
    g, _, _ = design_field_coupling(FieldToneConfig(1e4 * w, 400.0, 0.0), ref_spectra["x"])
    eta = ref_spectra["x"].lamb_dicke[0]
    np.testing.assert_allclose(g, eta * 1e4 * w / np.sqrt(10), rtol=1e-9)


def test_com_tone_mean_coupling(ref_spectra):
    D = spin_spin_matrix(SpinToneConfig.of(COM_TONE), ref_spectra["y"])
    off = ~np.eye(10, dtype=bool)
    assert np.mean(D[off]) == pytest.approx(210.0, rel=0.10)
    # weak decay: nearest neighbours and ends within a few tens of percent
    prof = coupling_statistics(np.where(off, D, 0)).profile
    assert prof[-1] / prof[0] > 0.5


def test_com_tone_closed_form_single_ion():
    cfg = ChainConfig(1, CA40_MASS_AMU, (5.0e6, 5.5e6, 1.0e6))
    sp = phonon_spectra(cfg)["y"]
    rabi, delta = 50e3, 20e3
    D = spin_spin_matrix(SpinToneConfig.of((rabi, delta)), sp)[0, 0]
    eta = sp.lamb_dicke[0]
    closed = eta**2 * rabi**2 / delta
    assert D == pytest.approx(closed, rel=2 * delta / 5.5e6)


def test_far_tone_power_law(ref_spectra):
    D = spin_spin_matrix(SpinToneConfig.of(FAR_TONE), ref_spectra["y"])
    np.fill_diagonal(D, 0.0)
    s = coupling_statistics(D)
    assert s.alpha == pytest.approx(1.98, abs=0.10)
    assert s.J0 == pytest.approx(80.0, rel=0.15)


def test_divergent_beat_note_kills_coupling(ref_spectra):
    deltas = np.array([1e8, 1e9, 1e10])
    vals = []
    for delta in deltas:
        D = spin_spin_matrix(SpinToneConfig.of((1e5, delta)), ref_spectra["y"])
        vals.append(np.abs(D).max())
    mu = 5.5e6 + deltas
    # D ~ 1 / mu**2 once mu dominates every mode frequency
    np.testing.assert_allclose(np.array(vals) * mu**2, vals[-1] * mu[-1] ** 2, rtol=5e-3)
    assert vals[-1] < 1e-5


def test_resonant_tone_rejected(ref_spectra):
    with pytest.raises(ResonanceError):
        spin_spin_matrix(SpinToneConfig.of((139e3, 0.0)), ref_spectra["y"])
    f = ref_spectra["y"].freqs
    with pytest.raises(ResonanceError):
        spin_spin_matrix(SpinToneConfig.of((139e3, f[3] - f[0])), ref_spectra["y"])


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.1, 10.0), delta=st.sampled_from([14e3, -11e3, 1.7e6, 40e3]))
def test_linearity_and_symmetry(ref_spectra, c, delta):
    tones = SpinToneConfig.of((1e5, delta))
    D = spin_spin_matrix(tones, ref_spectra["y"])
    D2 = spin_spin_matrix(SpinToneConfig.of((1e5 * c, delta)), ref_spectra["y"], guard=0.0)
    np.testing.assert_allclose(D2, c**2 * D, rtol=1e-12, atol=1e-12 * np.abs(D).max())
    assert np.max(np.abs(D - D.T)) <= 1e-12 * np.abs(D).max()
    g = np.full(10, 200.0)
    J = residual_dipole_matrix(D, g, 205.0)
    assert np.all(np.diag(J) == 0.0)
    np.testing.assert_array_equal(J, J.T)


def test_uniform_dipole_cancels():
    g = np.full(5, 210.0)
    J = residual_dipole_matrix(np.outer(g, g) / 205.0, g, 205.0)
    np.testing.assert_allclose(J, 0.0, atol=1e-12)


def test_zero_matrix_statistics():
    s = coupling_statistics(np.zeros((6, 6)))
    assert s.spread == 0.0
    assert np.all(s.mean_fields == 0) and np.all(s.profile == 0)
    assert s.alpha is None and s.J0 is None


def test_synthetic_cubic_fit():
    N = 12
    r = np.abs(np.subtract.outer(np.arange(N), np.arange(N))).astype(float)
    J = np.where(r > 0, 55.0 / np.where(r > 0, r, 1) ** 3, 0.0)
    s = coupling_statistics(J)
    assert s.alpha == pytest.approx(3.0, abs=0.01)
    assert s.J0 == pytest.approx(55.0, rel=1e-6)
    s = coupling_statistics(-J)
    assert s.J0 == pytest.approx(-55.0, rel=1e-6)


def test_fit_recovers_noisy_power_law(rng):
    r = np.arange(1, 10)
    v = 80.0 / r**1.98 * (1 + 0.01 * rng.standard_normal(9))
    alpha, J0 = fit_power_law(r, v)
    assert alpha == pytest.approx(1.98, abs=0.05)


def test_occupation_check(ref_spectra):
    sp = ref_spectra["y"]
    assert com_occupation_check(SpinToneConfig.of((0.0, 14e3)), sp).ratio == 0.0
    v = com_occupation_check(SpinToneConfig.of(COM_TONE), sp)
    eta = sp.lamb_dicke[0]
    oracle = 10 * (eta * 139e3 / (2 * np.sqrt(10) * 14e3)) ** 2
    assert v.ratio == pytest.approx(oracle, rel=1e-12)
    assert v.ratio == pytest.approx(0.04, abs=0.005) and v.passed
    half = com_occupation_check(SpinToneConfig.of((139e3, 7e3)), sp)
    assert half.ratio == pytest.approx(4 * v.ratio, rel=1e-12)


def test_reference_report(ref_chain, ref_spectra):
    rep = design_couplings(ref_chain, FIELD, SpinToneConfig.of(COM_TONE, FAR_TONE), spectra=ref_spectra)
    assert rep.sign == 1
    off = ~np.eye(10, dtype=bool)
    # the total mean field is of order omega_0
    assert 0.5 < np.mean(rep.stats.mean_fields) / rep.omega_0 < 2.0
    assert np.max(np.abs(rep.J - rep.J.T)) == 0.0
    assert np.all(rep.J[~off] == 0.0)


def test_invert_involution_and_sign(ref_chain, ref_spectra):
    rep = design_couplings(ref_chain, FIELD, SpinToneConfig.of(COM_TONE, FAR_TONE), spectra=ref_spectra)
    inv = invert_model_sign(rep)
    assert inv.sign == -1
    assert inv.stats.J0 == pytest.approx(-rep.stats.J0)
    back = invert_model_sign(inv)
    assert back.to_dict() == rep.to_dict()


def test_attractive_set_matches_up_to_sign(ref_chain, ref_spectra):
    rep = design_couplings(ref_chain, FIELD, SpinToneConfig.of(COM_TONE, FAR_TONE), spectra=ref_spectra)
    att = design_couplings(
        ref_chain, FIELD, SpinToneConfig.of((112e3, -11e3), FAR_TONE), inverted=True, spectra=ref_spectra
    )
    assert att.sign == -1
    dom = np.abs(rep.J) >= 0.5 * np.abs(rep.J).max()
    err = np.abs(att.J[dom] + rep.J[dom]) / np.abs(rep.J[dom])
    assert err.max() < 0.15
    assert att.stats.J0 < 0 < rep.stats.J0


def test_profile_pairing_enforced(ref_chain, ref_spectra):
    w = np.linspace(0.8, 1.2, 10)
    with pytest.raises(ValueError, match="profile"):
        design_couplings(
            ref_chain, FieldToneConfig(15.4e3 * w, 410.0, 0.0), SpinToneConfig.of(COM_TONE), spectra=ref_spectra
        )
    rep = design_couplings(
        ref_chain,
        FieldToneConfig(15.4e3 * w, 410.0, 0.0),
        SpinToneConfig.of((139e3 * w, 14e3)),
        spectra=ref_spectra,
    )
    assert rep.N == 10


def test_match_p2_term_cancels_mean(ref_spectra):
    spin, scale = match_p2_term(FIELD, SpinToneConfig.of(COM_TONE), ref_spectra)
    D = spin_spin_matrix(spin, ref_spectra["y"])
    g, wc, _ = design_field_coupling(FIELD, ref_spectra["x"])
    J = residual_dipole_matrix(D, g, wc)
    off = ~np.eye(10, dtype=bool)
    assert abs(np.mean(J[off])) < 1e-9 * np.abs(D).max()
    assert 0.9 < scale < 1.1


def test_report_json_round_trip(ref_chain, ref_spectra):
    rep = design_couplings(ref_chain, FIELD, SpinToneConfig.of(COM_TONE, FAR_TONE), spectra=ref_spectra)
    again = CouplingReport.from_dict(json.loads(rep.to_json()))
    assert again.to_json() == rep.to_json()
    np.testing.assert_array_equal(again.J, rep.J)


def test_large_field_detuning_warns(ref_spectra):
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        design_field_coupling(FieldToneConfig(15.4e3, 2e5, 0.0), ref_spectra["x"])
    assert any("not small" in str(x.message) for x in w)
