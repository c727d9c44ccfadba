import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from mmcoupler.model import (
    CouplingGraph,
    FockSpace,
    Mode,
    SystemModel,
    assemble_hamiltonian,
    coupling_strength,
    dense_hamiltonian,
    ghz,
    hamiltonian_at,
    local_operators,
    mhz,
    unit_cell_model,
    to_mhz,
    total_number,
)
from mmcoupler.pulses import CZParams, schedule_cz


def test_coupling_strength_table_rows():
    assert coupling_strength(0.0, 1.0, 2.0) == 0.0
    # frozen hand arithmetic: beta * sqrt(f_a f_b) in MHz
    g = coupling_strength(0.000842, ghz(4.937), ghz(4.796))
    assert to_mhz(g) == pytest.approx(0.000842 * np.sqrt(4.937 * 4.796) * 1e3, rel=1e-12)
    assert to_mhz(g) == pytest.approx(4.097, abs=5e-4)
    g = coupling_strength(-0.0145109, ghz(3.639), ghz(4.796))
    assert to_mhz(g) == pytest.approx(-60.6, abs=0.05)


def test_coupling_strength_rejects_nonpositive():
    with pytest.raises(ValueError):
        coupling_strength(0.1, 0.0, 1.0)


def test_ladder_single_mode():
    space = FockSpace(["q1"], [2])
    a, ad, n = local_operators(space, "q1")
    A = a.toarray()
    assert np.allclose(A @ [0, 1], [1, 0])
    assert np.allclose(A @ [1, 0], [0, 0])
    assert np.allclose(n.toarray(), ad.toarray() @ A)


def test_commutator_except_top_level():
    space = FockSpace(["q1", "c"], [4, 3])
    a, ad, _ = local_operators(space, "q1")
    comm = (a.matrix @ ad.matrix - ad.matrix @ a.matrix).toarray()
    top = space.states[:, 0] == 3
    assert np.allclose(np.diag(comm)[~top], 1.0)
    assert np.allclose(np.diag(comm)[top], -3.0)


def test_number_operator_on_five_modes():
    m = unit_cell_model(2)
    _, _, n = local_operators(m.space, "q2")
    v = m.space.basis_vector({"q2": 1})
    assert np.vdot(v, n @ v).real == 1.0
    with pytest.raises(KeyError):
        local_operators(m.space, "q9")


def test_uncoupled_is_diagonal_duffing():
    modes = [Mode("q1", ghz(4.937), mhz(-183), levels=3), Mode("c", ghz(4.796), mhz(-179), levels=3)]
    m = SystemModel(modes, CouplingGraph())
    H = assemble_hamiltonian(m).toarray()
    assert np.count_nonzero(H - np.diag(np.diag(H))) == 0
    e2 = H[m.space.index({"q1": 2}), m.space.index({"q1": 2})]
    assert e2.real == pytest.approx(2 * ghz(4.937) + mhz(-183), rel=1e-14)


def test_sparse_matches_dense_and_ground_energy(model2):
    H = assemble_hamiltonian(model2)
    D = dense_hamiltonian(model2)
    assert np.max(np.abs(H.toarray() - D)) < 1e-12
    assert H.hermitian and H.is_hermitian()
    w = np.linalg.eigvalsh(D)
    # frozen from the Kronecker-product oracle
    assert w[0] == pytest.approx(-0.0156785900484, abs=1e-9)
    assert w[0] < 0


def test_rwa_conserves_excitations(model2):
    H = assemble_hamiltonian(model2, rwa=True).matrix
    N = total_number(model2.space)
    assert abs(H @ N - N @ H).max() == 0
    assert np.max(np.abs(H.toarray() - dense_hamiltonian(model2, rwa=True))) < 1e-12


def test_sparsity_linear_in_dim():
    nnz = []
    for lev in (3, 4):
        m = unit_cell_model(2, lev)
        H = assemble_hamiltonian(m).matrix
        nnz.append(H.nnz / m.space.total_dim)
    # 6 edges x 4 ladder combos + diagonal bounds the entries per row
    assert all(r <= 6 * 4 + 1 for r in nnz)


def test_coupling_graph_rejects_foreign_edges():
    with pytest.raises(ValueError):
        CouplingGraph.from_pairs([("q1", "q2", 0.1)])
    with pytest.raises(ValueError):
        CouplingGraph.from_pairs([("q1", "c2", 0.1)])
    with pytest.raises(ValueError):
        CouplingGraph.from_pairs([("c", "c", 0.1)])
    with pytest.raises(ValueError):
        SystemModel([Mode("q1", 1.0)], CouplingGraph.from_pairs([("q1", "c", 0.1)]))


def test_mode_validation():
    with pytest.raises(ValueError):
        Mode("q1", -1.0)
    with pytest.raises(ValueError):
        Mode("q1", 1.0, levels=1)


def test_hamiltonian_at_plateau_and_tails(model2):
    p = CZParams(mhz(20), mhz(-120), mhz(980), mhz(930), 3.4)
    s = schedule_cz(p)
    stack = model2.structure()
    for t, expect in ((0.0, 0.0), (30.0, 1.0)):
        H = hamiltonian_at(model2, s, t).matrix
        c = model2.coefficients(s.frequencies(model2.idle, t))
        assert abs(H - stack.assemble(c)).max() < 1e-12
        w_q2 = s.frequencies(model2.idle, t)["q2"]
        assert w_q2 - model2.idle["q2"] == pytest.approx(expect * p.A_q2, abs=abs(p.A_q2) * 0.03)
    with pytest.raises(ValueError):
        hamiltonian_at(model2, s, 61.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(2, 4), min_size=1, max_size=4), st.one_of(st.none(), st.integers(1, 5)))
def test_fock_codec_bijective(dims, cap):
    space = FockSpace([f"q{i + 1}" for i in range(len(dims))], dims, cap)
    idx = space.lookup(space.states)
    assert np.array_equal(idx, np.arange(space.total_dim))
    if cap is None:
        assert space.total_dim == int(np.prod(dims))


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05))
def test_frequency_scaling_consistency(dq, dc):
    m = unit_cell_model(2)
    f = m.frequencies(q1=m.idle["q1"] * (1 + dq), c=m.idle["c"] * (1 + dc))
    c = m.coefficients(f)
    names = m.structure().names
    for a, b, beta in m.edges():
        k = names.index(f"g:{a}-{b}")
        assert c[k] == pytest.approx(coupling_strength(beta, f[a], f[b]), rel=1e-14)
    H = assemble_hamiltonian(m, f)
    assert H.is_hermitian()
    assert sp.issparse(H.matrix)
