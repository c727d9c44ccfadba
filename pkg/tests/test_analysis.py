import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcoupler.analysis import (
    NormalizationError,
    hybridization,
    inverse_participation_ratio,
    leakage_report,
    mode_occupations,
    occupation_map,
)
from mmcoupler.calibrate import idle_spectrum
from mmcoupler.model import CouplingGraph, FockSpace, Mode, SystemModel, unit_cell_model
from mmcoupler.propagate import Trajectory


def test_ipr_examples():
    e = np.zeros(9)
    e[4] = 1
    assert inverse_participation_ratio(e) == 1.0
    assert inverse_participation_ratio(np.full(9, 1 / 3)) == pytest.approx(1 / 9)
    with pytest.raises(NormalizationError):
        inverse_participation_ratio(np.ones(4))
    with pytest.raises(ValueError):
        inverse_participation_ratio(e, FockSpace(["q1"], [3]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_ipr_bounds(n, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    v /= np.linalg.norm(v)
    ipr = inverse_participation_ratio(v)
    assert 1 / n - 1e-12 <= ipr <= 1 + 1e-12
    # a global phase does not matter
    assert inverse_participation_ratio(np.exp(0.7j) * v) == pytest.approx(ipr, rel=1e-12)


def test_uncoupled_states_fully_localized():
    m = SystemModel([Mode("q1", 5.0), Mode("q2", 5.3), Mode("c", 4.0)], CouplingGraph())
    ls = idle_spectrum(m)
    om = occupation_map(ls, ["q1", "q2"])
    assert np.allclose(om.ipr, 1.0)
    assert np.allclose(om.coupler_occupation, 0.0)
    assert om.group.tolist() == [0, 1, 1, 2]
    assert hybridization(ls, ["q1", "q2"]) == {"qubit": 0.0, "coupler": 0.0}


def test_mode_occupations_batch():
    space = FockSpace(["q1", "c"], [2, 3])
    v = np.zeros((2, space.total_dim))
    v[0, space.index({"c": 2})] = 1
    v[1, space.index({"q1": 1})] = v[1, space.index({"c": 1})] = 1 / np.sqrt(2)
    occ = mode_occupations(v, space)
    assert occ["c"].tolist() == pytest.approx([2.0, 0.5])
    assert occ["q1"].tolist() == pytest.approx([0.0, 0.5])


def test_occupation_map_table1(labeled2):
    om = occupation_map(labeled2)
    assert om.labels[0] == (0, 0, 0, 0, 0)
    total = om.qubit_occupation.sum(axis=1) + om.coupler_occupation
    # total number is nearly conserved, the counter-rotating admixture is tiny
    assert np.allclose(total, om.group, atol=1e-3)
    h = hybridization(labeled2)
    assert h["coupler"] > 10 * h["qubit"]


def test_leakage_identity():
    m = unit_cell_model(2, 2)
    ls = idle_spectrum(m)
    psi = ls.vector({"q1": 1})
    rep = leakage_report(Trajectory(np.array([0.0, 1.0]), np.stack([psi, psi])), ls)
    assert rep["center_residual"] == 0.0
    assert all(v == 0.0 for v in rep["delta"].values())
    assert rep["center_leakage"] == pytest.approx(0.0, abs=1e-15)
    psi2 = ls.vector({"c": 1})
    rep = leakage_report(Trajectory(np.array([0.0, 1.0]), np.stack([psi, psi2])), ls)
    assert rep["center_leakage"] == pytest.approx(1.0, abs=1e-12)
    assert rep["coupler_leakage"] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        leakage_report(Trajectory(np.array([0.0]), psi[None]), ls)
