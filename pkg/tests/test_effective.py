import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcoupler.calibrate import idle_spectrum
from mmcoupler.effective import (
    RATIO,
    DispersiveGuardError,
    JacobiModel,
    ResonanceError,
    analytic_propagators,
    center_drive_amplitude,
    conditional_phase_analytic,
    crosstalk_matrix_elements,
    duration_comparison,
    jacobi_listed_elements,
    jacobi_propagator,
    manifold_hamiltonians,
    manifold_matrices,
    resonance_ratio_check,
    resonant_manifold,
    schrieffer_wolff,
    sgn,
    spectator_drive_amplitude,
)
from mmcoupler.model import CouplingGraph, SystemModel, coupling_strength, ghz, local_operators, mhz, unit_cell_model, to_mhz

MODES = ["q1", "q2", "c", "c1", "c2"]


def _without(model, keep):
    """Copy of ``model`` keeping only edges for which ``keep(edge)`` is true."""
    edges = {k: (v if keep(k) else 0.0) for k, v in model.couplings.edges.items()}
    return SystemModel(list(model.modes.values()), CouplingGraph(edges))


def _single_excitation_matrix(eff):
    H = np.diag([eff.omega[k] for k in MODES])
    H[0, 2] = H[2, 0] = eff.g_cq1
    H[1, 2] = H[2, 1] = eff.g_cq2
    H[3, 4] = H[4, 3] = eff.g_c1c2
    return H


def test_sw_without_coupler_links_is_bare():
    m = _without(unit_cell_model(2), lambda k: not (k & {"c1", "c2"}))
    eff = schrieffer_wolff(m)
    for k in MODES:
        assert eff.omega[k] == m.idle[k]
    assert eff.g_cq1 == pytest.approx(coupling_strength(0.000842, m.idle["q1"], m.idle["c"]))
    assert eff.g_c1c2 == 0.0


def test_sw_idle_residual_coupling(model2):
    eff = schrieffer_wolff(model2)
    bare = coupling_strength(0.000842, model2.idle["q1"], model2.idle["c"])
    # the idle point cancels ZZ, which leaves g~ at 15% of the bare coupling
    assert abs(eff.g_cq1) < 0.2 * abs(bare)
    assert to_mhz(eff.g_cq1) == pytest.approx(0.6073, abs=1e-3)
    assert to_mhz(eff.g_cq2) == pytest.approx(0.6817, abs=1e-3)


@settings(max_examples=40, deadline=None)
@given(st.floats(4.6, 5.2), st.floats(4.5, 5.0), st.floats(3.0, 4.0))
def test_sw_coupling_formula(fq, fc, fcj):
    m = unit_cell_model(2)
    f = m.frequencies(q1=ghz(fq), c=ghz(fc), c1=ghz(fcj))
    eff = schrieffer_wolff(m, f)
    w = f
    g_cq = coupling_strength(0.000842, w["q1"], w["c"])
    g_q = coupling_strength(0.0194089, w["q1"], w["c1"])
    g_c = coupling_strength(-0.0145109, w["c"], w["c1"])
    expect = g_cq + 0.5 * g_q * g_c * (
        1 / (w["q1"] - w["c1"]) + 1 / (w["c"] - w["c1"]) - 1 / (w["q1"] + w["c1"]) - 1 / (w["c"] + w["c1"])
    )
    assert eff.g_cq1 == pytest.approx(expect, rel=1e-12, abs=1e-15)


def test_sw_guard():
    m = unit_cell_model(2)
    with pytest.raises(DispersiveGuardError, match=r"\(q1,c1\)"):
        schrieffer_wolff(m, m.frequencies(c1=m.idle["q1"] - mhz(100)))


def test_sw_fourth_order_scaling():
    # harmonic modes, couplers as the only links: the neglected terms are O(g^4)
    base = unit_cell_model(2)
    modes = [replace(md, alpha=0.0) for md in base.modes.values()]
    errs = []
    for s in (0.5, 0.25, 0.125):
        edges = {k: (v * s if k & {"c1", "c2"} else 0.0) for k, v in base.couplings.edges.items()}
        m = SystemModel(modes, CouplingGraph(edges))
        w, v = np.linalg.eigh(_single_excitation_matrix(schrieffer_wolff(m)))
        approx = np.array([w[np.argmax(np.abs(v[i]))] for i in range(5)])
        ls = idle_spectrum(m, max_total_excitations=1)
        exact = np.array([ls.energy({k: 1}) - ls.energy({}) for k in MODES])
        errs.append(np.max(np.abs(approx - exact)))
    assert errs[0] / errs[1] >= 8 and errs[1] / errs[2] >= 8


def test_manifold_resonance_rate():
    g2 = 0.05
    wc, alpha = ghz(4.796), mhz(-183)
    mm = resonant_manifold(wc, alpha, g2)
    assert mm.Omega == pytest.approx(2 * g2, rel=1e-15)
    # all three diagonal entries of H2 coincide at 2 wc - alpha
    E = 2 * wc - alpha
    assert np.allclose(np.linalg.eigvalsh(mm.H2), [E - 2 * g2, E, E + 2 * g2], atol=1e-12)
    zero = manifold_matrices(5.0, 4.8, 4.7, -0.2, 0.0, 0.0)
    assert np.count_nonzero(zero.H1 - np.diag(np.diag(zero.H1))) == 0
    assert np.count_nonzero(zero.H2 - np.diag(np.diag(zero.H2))) == 0


def test_manifold_from_effective(model2):
    mm = manifold_hamiltonians(schrieffer_wolff(model2))
    assert np.allclose(mm.H1, mm.H1.conj().T) and np.allclose(mm.H2, mm.H2.conj().T)


def test_analytic_propagators_match_expm(rng):
    g2 = math.pi / 60
    mm = resonant_manifold(ghz(4.796), mhz(-183), g2)
    H1 = mm.H1.copy()
    H1[0, 2] = H1[2, 0] = 0.0  # U1 drops the off-resonant link
    worst = 0.0
    for t in rng.uniform(0, 120, 50):
        U1, U2 = analytic_propagators(mm, t)
        worst = max(worst, np.abs(U1 - sla.expm(-1j * H1 * t)).max(), np.abs(U2 - sla.expm(-1j * mm.H2 * t)).max())
        for U in (U1, U2):
            assert np.abs(U.conj().T @ U - np.eye(3)).max() < 1e-12
    assert worst < 1e-10


def test_analytic_propagator_special_times():
    g2 = math.pi / 60
    mm = resonant_manifold(ghz(4.796), mhz(-183), g2)
    U1, U2 = analytic_propagators(mm, 0.0)
    assert np.allclose(U1, np.eye(3)) and np.allclose(U2, np.eye(3))
    _, U2 = analytic_propagators(mm, 2 * math.pi / mm.Omega)
    assert np.allclose(np.abs(np.diag(U2)), 1.0, atol=1e-12)
    _, U2 = analytic_propagators(mm, math.pi / mm.Omega)
    assert abs(U2[0, 0]) ** 2 == pytest.approx(0.25, abs=1e-12)
    assert abs(U2[0, 1]) ** 2 == pytest.approx(0.75, abs=1e-12)


def test_analytic_propagators_off_resonance():
    mm = manifold_matrices(5.0, 4.8, 4.7, -0.2, 0.01, 0.01)
    with pytest.raises(ResonanceError):
        analytic_propagators(mm, 1.0)


def test_resonance_ratio_examples():
    assert resonance_ratio_check(math.sqrt(1.5), 1.0) == (True, 0.0)
    ok, dev = resonance_ratio_check(1.0, 1.0)
    assert not ok and dev == pytest.approx(-0.2247, abs=1e-4)
    assert resonance_ratio_check(-math.sqrt(1.5) * 0.3, 0.3)[0]
    with pytest.raises(ValueError):
        resonance_ratio_check(1.0, 0.0)


def test_conditional_phase():
    assert conditional_phase_analytic(0.1, 0.0) == 0.0
    assert conditional_phase_analytic(math.pi / 60, 60.0) == pytest.approx(math.pi)
    assert sgn(0.0) == 1.0
    assert conditional_phase_analytic(0.0, 5.0) == 0.0
    assert conditional_phase_analytic(0.1, 0.0, (0.0, 0.2, 0.3, 0.1)) == pytest.approx(0.4)


def test_jacobi_reduces_to_u1_without_g1():
    wb = ghz(4.796)
    g2 = math.pi / 60
    mm = resonant_manifold(wb, mhz(-183), g2, g1=0.0)
    for t in (0.0, 13.0, 47.5):
        U1, _ = analytic_propagators(mm, t)
        assert np.abs(jacobi_propagator(mm.omega_q1, wb, 0.0, g2, t) - U1).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 1.5), st.floats(0.01, 0.08), st.floats(0.5, 1.5))
def test_jacobi_against_dense(detuning, g2, ratio):
    wb = 0.0
    wa = detuning
    g1 = ratio * RATIO * g2
    jm = JacobiModel(wa, wb, g1, g2)
    v11, v12 = jm.weights
    assert v11**2 + v12**2 == pytest.approx(1.0, abs=1e-12)
    H = np.array([[wb, g2, g1], [g2, wb, 0], [g1, 0, wa]])
    amp = pop = 0.0
    for t in np.linspace(0, 100, 41):
        assert jm.r(t) ** 2 + jm.c(t) ** 2 == pytest.approx(1.0, abs=1e-12)
        U = jm.propagator(t)
        assert np.abs(U.conj().T @ U - np.eye(3)).max() < 1e-12
        X = sla.expm(-1j * H * t)
        amp = max(amp, np.abs(U - X).max())
        pop = max(pop, np.abs(np.abs(U) ** 2 - np.abs(X) ** 2).max())
    # the dropped residual coupling shows up first as a phase drift
    if g1 / detuning <= 0.03:
        assert amp < 0.02
    if g1 / detuning <= 0.06:
        assert pop < 0.02


def test_jacobi_listed_elements():
    jm = JacobiModel(1.15, 0.0, RATIO * 0.05, 0.05)
    names = ["001", "010", "100"]
    for t in (0.0, 7.0, 33.0, 91.0):
        U = jm.propagator(t)
        for (a, b), val in jacobi_listed_elements(jm, t).items():
            assert U[names.index(a), names.index(b)] == pytest.approx(val, abs=1e-12)
            assert U[names.index(b), names.index(a)] == pytest.approx(val, abs=1e-12)
    assert np.allclose(jm.propagator(0.0), np.eye(3))
    with pytest.raises(ValueError):
        JacobiModel(0.0, 1.0, 0.1, 0.1)


def test_crosstalk_zero_coupling():
    m = _without(unit_cell_model(2), lambda k: False)
    assert all(v == 0 for v in crosstalk_matrix_elements(m).values())


@pytest.mark.parametrize("f_c1", [3.3, 3.639, 3.9])
def test_crosstalk_against_rwa_numerics(f_c1):
    m = unit_cell_model(2)
    f = m.frequencies(c1=ghz(f_c1))
    ls = idle_spectrum(m, f, rwa=True)
    a, ad, _ = local_operators(m.space, "q1")
    q = 1j * (ad.matrix - a.matrix)
    ce = crosstalk_matrix_elements(m, f)
    states = {
        ("001", "000"): ({"c": 1}, {}),
        ("010", "000"): ({"q2": 1}, {}),
        ("101", "100"): ({"q1": 1, "c": 1}, {"q1": 1}),
        ("200", "001"): ({"q1": 2}, {"c": 1}),
    }
    for key, (fin, ini) in states.items():
        num = abs(np.vdot(ls.vector(fin), q @ ls.vector(ini)))
        assert num == pytest.approx(abs(ce[key]), rel=0.2)


def test_first_and_second_order_amplitudes(model2):
    a_t = center_drive_amplitude(model2)
    wc = model2.idle["c"]
    expect = coupling_strength(0.000842, model2.idle["q1"], wc) + coupling_strength(
        0.0194089, model2.idle["q1"], model2.idle["c1"]
    ) * coupling_strength(-0.0145109, wc, model2.idle["c1"]) / (wc - model2.idle["c1"])
    assert a_t == pytest.approx(expect, rel=1e-12)
    lone = _without(model2, lambda k: "q2" not in k)
    assert spectator_drive_amplitude(lone) == 0.0


def test_duration_comparison():
    for g1 in (0.01, 0.2, 3.0):
        d = duration_comparison(g1)
        assert d["ratio"] == pytest.approx((math.sqrt(2) + 1) / math.sqrt(3), rel=1e-15)
    assert duration_comparison(2 * math.pi * 0.01)["tau_new"] == pytest.approx(61.24, abs=0.01)
    with pytest.raises(ValueError):
        duration_comparison(0.0)
