import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcoupler.calibrate import idle_spectrum
from mmcoupler.gates import (
    CZ,
    PROBE_STATE,
    GateError,
    NoiseSpec,
    ProjectionError,
    ThreeModeGate,
    average_fidelity_with_decoherence,
    average_gate_fidelity_unitary,
    closed_form_decoherence_infidelity,
    cz_average_infidelity,
    cz_process,
    cz_state_infidelity,
    haar_average_fidelity,
    ideal_rotation,
    optimize_cz,
    perturbative_coefficients,
    phase_correction,
    run_cz,
    run_single_qubit_gate,
    state_fidelity,
)
from mmcoupler.model import CouplingGraph, Mode, SystemModel, ghz, mhz, unit_cell_model
from mmcoupler.propagate import MagnusConfig
from mmcoupler.pulses import ChargeDrive, CZParams, amplitude_for_angle, schedule_cz


def _haar_unitary(rng, d=4):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _unitary_channel(V):
    return lambda X: V @ X @ V.conj().T


# ------------------------------------------------------------ fidelity metrics


def test_state_fidelity_examples():
    psi = np.array([1, 1j]) / math.sqrt(2)
    rho = np.outer(psi, psi.conj())
    assert state_fidelity(rho, rho) == pytest.approx(1.0)
    assert state_fidelity(np.eye(2) / 2, rho) == pytest.approx(0.5)
    assert state_fidelity(0.9 * rho, rho) == pytest.approx(0.9)
    with pytest.raises(ProjectionError):
        state_fidelity(1.1 * rho, rho)


def test_phase_correction_recovers_cz():
    a, b = 0.37, -1.2
    U = np.diag(np.exp(1j * np.array([0, a, b, a + b + math.pi])))
    S = phase_correction(-a, -b)
    assert np.allclose(S @ U, CZ)


def test_identity_against_cz_is_two_fifths():
    # (|Tr U^+ V|^2 + d) / (d (d + 1)) with Tr CZ = 2
    assert average_gate_fidelity_unitary(lambda X: X, CZ) == pytest.approx(0.4, abs=1e-12)
    assert average_gate_fidelity_unitary(_unitary_channel(CZ), CZ) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_pauli_sum_matches_trace_formula(seed):
    rng = np.random.default_rng(seed)
    V = _haar_unitary(rng)
    expect = (abs(np.trace(CZ.conj().T @ V)) ** 2 + 4) / 20
    got = average_gate_fidelity_unitary(_unitary_channel(V), CZ)
    assert got == pytest.approx(expect, abs=1e-12)
    assert 0.2 - 1e-12 <= got <= 1 + 1e-12


def test_pauli_sum_matches_haar_sampling(rng):
    V = sla.expm(-0.3j * (np.diag([0, 0.4, 0.2, 3.3]) + 0.1 * np.ones((4, 4))))
    chan = lambda X: 0.97 * V @ X @ V.conj().T + 0.03 * np.trace(X) * np.eye(4) / 4  # noqa: E731
    f = average_gate_fidelity_unitary(chan, CZ)
    mc, se = haar_average_fidelity(chan, CZ, 4000, rng)
    assert abs(mc - f) < 3 * se


def test_average_fidelity_validation():
    with pytest.raises(GateError):
        average_gate_fidelity_unitary(lambda X: X @ X, CZ)
    with pytest.raises(ValueError):
        average_gate_fidelity_unitary(lambda X: X, np.eye(2))


# ------------------------------------------------------------ CZ plumbing


@pytest.fixture(scope="module")
def small():
    m = unit_cell_model(2, 2)
    return m, idle_spectrum(m)


def test_idle_schedule_is_identity(small):
    m, ls = small
    zero = CZParams(0.0, 0.0, 0.0, 0.0, 3.0)
    res = run_cz(m, ls, schedule_cz(zero), PROBE_STATE, MagnusConfig(dt=0.1), ideal=np.eye(4))
    assert 1 - res.fidelity < 1e-8
    assert res.phases["cp"] == pytest.approx(0.0, abs=1e-3) or res.phases["cp"] == pytest.approx(2 * math.pi, abs=1e-3)
    assert res.leakage["center_leakage"] == pytest.approx(0.0, abs=1e-9)
    proc = cz_process(m, ls, zero, MagnusConfig(dt=0.1))
    # identity process scored against CZ
    assert cz_average_infidelity(proc) == pytest.approx(0.6, abs=1e-6)
    # |<++|CZ|++>|^2 = 1/4
    assert cz_state_infidelity(proc) == pytest.approx(0.75, abs=1e-6)


def test_run_cz_rejects_bad_initial(small):
    m, ls = small
    with pytest.raises(ValueError):
        run_cz(m, ls, schedule_cz(CZParams(0, 0, 0, 0, 3.0)), np.ones(3))


def test_schedule_on_missing_mode_errors():
    m = unit_cell_model(2, 2).subsystem(["q1", "q2", "c"])
    ls = idle_spectrum(m)
    with pytest.raises(GateError):
        run_cz(m, ls, schedule_cz(CZParams(0, 0, mhz(100), 0, 3.0)))


def test_optimizer_stops_at_budget_and_target(small):
    m, ls = small
    seed = CZParams(mhz(20), mhz(-120), mhz(950), mhz(900), 3.4)
    out = optimize_cz(m, ls, seed, config=MagnusConfig(dt=0.2), max_evals=4)
    assert out.evaluations == 4 and len(out.trace) == 4
    assert out.infidelity <= out.initial_infidelity
    done = optimize_cz(m, ls, seed, config=MagnusConfig(dt=0.2), target=2.0)
    assert done.evaluations == 1
    with pytest.raises(ValueError):
        optimize_cz(m, ls, seed, objective="worst")


# ------------------------------------------------------------ decoherence


def test_noise_spec():
    n = NoiseSpec.uniform(["q1", "c"], 100.0)
    assert n.rates("q1") == (0.01, 0.005, 0.0)
    assert n.scaled(2.0).rates("c")[:2] == (0.02, 0.01)
    assert NoiseSpec.from_times({"q1": math.inf}, {}).rates("q1")[0] == 0.0
    assert NoiseSpec(nbar={"q1": 0.1}).occupation("q1") == 0.1
    assert NoiseSpec(temperature=0.05).occupation("q1", ghz(5.0)) > 0
    with pytest.raises(ValueError):
        NoiseSpec.from_times({"q1": 0.0}, {})
    with pytest.raises(ValueError):
        NoiseSpec(temperature=-1)


def test_closed_form_values():
    modes = ("q1", "q2", "c")
    val = closed_form_decoherence_infidelity(60.0, dict.fromkeys(modes, 20e3), dict.fromkeys(modes, 40e3))
    assert val == pytest.approx(4.06e-3, abs=1e-5)
    assert closed_form_decoherence_infidelity(60.0, {"c": 1e3}, {}) == pytest.approx(60.0 / 8e3, rel=1e-12)
    assert closed_form_decoherence_infidelity(60.0, {}, {}) == 0.0


def test_perturbative_coefficients_match_closed_form():
    c = perturbative_coefficients()
    frozen = {
        ("relax", "q1"): 73 / 160,
        ("relax", "q2"): 7 / 32,
        ("relax", "c"): 1 / 8,
        ("dephase", "q1"): 6283 / 10240,
        ("dephase", "q2"): 2963 / 10240,
        ("dephase", "c"): 131 / 640,
    }
    for k, v in frozen.items():
        assert c[k] == pytest.approx(v, abs=1e-9)


def test_perturbative_zero_rates_and_guards():
    g = ThreeModeGate()
    assert average_fidelity_with_decoherence(g, NoiseSpec(), "perturbative") == 1.0
    with pytest.raises(ValueError):
        average_fidelity_with_decoherence(g, NoiseSpec(gamma={"q1": 1e-4}, nbar={"q1": 0.1}), "perturbative")
    with pytest.raises(ValueError):
        average_fidelity_with_decoherence(g, NoiseSpec(), "monte-carlo")


def test_lindblad_relaxation_on_centre_only():
    g = ThreeModeGate()
    f0 = average_fidelity_with_decoherence(g, NoiseSpec())
    f = average_fidelity_with_decoherence(g, NoiseSpec(gamma={"c": 1 / 20e3}))
    # small-rate decoherence adds linearly to the coherent error
    assert (f0 - f) == pytest.approx(60.0 / 8 / 20e3, rel=0.1)


# ------------------------------------------------------------ single-qubit gates


def test_single_qubit_trivial_and_resonant():
    m = SystemModel([Mode("q1", ghz(5.0), mhz(-200), levels=3)], CouplingGraph())
    ls = idle_spectrum(m)
    zero = ChargeDrive("q1", 0.0, 4.0, ghz(5.0), duration=20.0)
    assert run_single_qubit_gate(m, ls, zero, theta=0.0).fidelity == pytest.approx(1.0, abs=1e-12)
    a = amplitude_for_angle(math.pi / 2, 4.0, 20.0)
    d = ChargeDrive("q1", a, 4.0, ghz(5.0), duration=20.0)
    res = run_single_qubit_gate(m, ls, d, theta=math.pi / 2, config=MagnusConfig(dt=0.002))
    # only the anharmonic third level spoils a weak, slow drive
    assert 1 - res.fidelity < 5e-3
    with pytest.raises(GateError):
        run_single_qubit_gate(m, ls, ChargeDrive("q9", a, 4.0, 1.0))


def test_ideal_rotation_unitary():
    U = ideal_rotation(1.1, 0.4)
    assert np.allclose(U @ U.conj().T, np.eye(2))
    assert np.allclose(ideal_rotation(math.pi) @ [1, 0], [0, 1])
