"""Modes, couplings, truncated Fock spaces and Hamiltonian assembly.

Units throughout the package: angular frequencies in rad/ns, times in ns.
Configuration files carry ordinary frequencies (GHz, MHz) and are
converted on load with :func:`ghz` / :func:`mhz`.

The lattice Hamiltonian is

    H = sum_l [w_l n_l + a_l/2 n_l (n_l - 1)]
        - sum_<l,l'> g_ll' (a_l^+ - a_l)(a_l'^+ - a_l'),

with g_ll' = beta_ll' sqrt(w_l w_l').  Counter-rotating terms are kept
unless ``rwa=True`` is requested.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

TWO_PI = 2.0 * np.pi

_QUBIT = re.compile(r"^q(\d+)$")
_COUPLER = re.compile(r"^c(\d+)$")
CENTER = "c"


def ghz(f: float) -> float:
    """Convert an ordinary frequency in GHz to rad/ns."""
    return TWO_PI * f


def mhz(f: float) -> float:
    """Convert an ordinary frequency in MHz to rad/ns."""
    return TWO_PI * f * 1e-3


def to_ghz(w: float) -> float:
    return w / TWO_PI


def to_mhz(w: float) -> float:
    return w / TWO_PI * 1e3


def mode_kind(label: str) -> str:
    """Return ``'qubit'``, ``'center'`` or ``'coupler'`` for a mode label."""
    if label == CENTER:
        return "center"
    if _QUBIT.match(label):
        return "qubit"
    if _COUPLER.match(label):
        return "coupler"
    raise ValueError(f"unrecognised mode label {label!r}")


def mode_index(label: str) -> int:
    m = _QUBIT.match(label) or _COUPLER.match(label)
    if m is None:
        raise ValueError(f"mode {label!r} carries no index")
    return int(m.group(1))


@dataclass(frozen=True)
class Mode:
    """A weakly anharmonic (Duffing) mode."""

    label: str
    omega: float
    alpha: float = 0.0
    charge_zpf: float = 1.0
    levels: int = 3

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"mode {self.label}: omega must be positive, got {self.omega}")
        if self.levels < 2:
            raise ValueError(f"mode {self.label}: need at least 2 levels, got {self.levels}")
        mode_kind(self.label)


def _edge_allowed(a: str, b: str) -> bool:
    ka, kb = mode_kind(a), mode_kind(b)
    kinds = {ka, kb}
    if kinds == {"center", "qubit"} or kinds == {"center", "coupler"}:
        return True
    if kinds == {"qubit", "coupler"}:
        return mode_index(a) == mode_index(b)
    return False


@dataclass(frozen=True)
class CouplingGraph:
    """Symmetric map from unordered mode pairs to capacitive ratios beta."""

    edges: Mapping[frozenset, float] = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str, float]], strict: bool = True):
        edges: dict[frozenset, float] = {}
        for a, b, beta in pairs:
            if a == b:
                raise ValueError(f"self-coupling on {a!r}")
            if strict and not _edge_allowed(a, b):
                raise ValueError(f"coupling ({a}, {b}) is not part of the unit-cell graph")
            key = frozenset((a, b))
            if key in edges and edges[key] != beta:
                raise ValueError(f"conflicting beta for ({a}, {b})")
            edges[key] = float(beta)
        return cls(edges)

    def beta(self, a: str, b: str) -> float:
        return self.edges.get(frozenset((a, b)), 0.0)

    def pairs(self, order: Sequence[str] | None = None) -> list[tuple[str, str, float]]:
        """Edges as ``(a, b, beta)`` with ``a`` before ``b`` in ``order``."""
        rank = {m: i for i, m in enumerate(order)} if order is not None else None
        out = []
        for key, beta in self.edges.items():
            a, b = sorted(key, key=(rank.__getitem__ if rank else None))
            out.append((a, b, beta))
        out.sort(key=lambda e: (rank[e[0]], rank[e[1]]) if rank else (e[0], e[1]))
        return out

    def restrict(self, labels: Iterable[str]) -> "CouplingGraph":
        keep = set(labels)
        return CouplingGraph({k: v for k, v in self.edges.items() if k <= keep})

    def scaled(self, factor: float, only: Iterable[str] | None = None) -> "CouplingGraph":
        """Scale every beta touching one of ``only`` (all edges if None)."""
        sel = set(only) if only is not None else None
        return CouplingGraph(
            {k: (v * factor if sel is None or k & sel else v) for k, v in self.edges.items()}
        )


class FockSpace:
    """Truncated product space of local number states.

    ``dims`` caps each mode; ``max_excitations`` optionally caps the total
    number of quanta, keeping only states with ``sum(n) <= max_excitations``.
    States are ordered like a C-ordered ``ravel`` of the full product
    (first mode slowest), with excluded states skipped.
    """

    def __init__(self, mode_order: Sequence[str], dims: Sequence[int], max_excitations: int | None = None):
        if len(mode_order) != len(dims):
            raise ValueError("mode_order and dims differ in length")
        if len(set(mode_order)) != len(mode_order):
            raise ValueError("duplicate mode labels")
        self.mode_order = tuple(mode_order)
        self.dims = tuple(int(d) for d in dims)
        self.max_excitations = max_excitations
        grids = np.indices(self.dims).reshape(len(self.dims), -1).T
        if max_excitations is not None:
            grids = grids[grids.sum(axis=1) <= max_excitations]
        self.states = np.ascontiguousarray(grids, dtype=np.int64)
        self._flat = np.ravel_multi_index(self.states.T, self.dims)
        self._pos = {m: i for i, m in enumerate(self.mode_order)}

    @property
    def total_dim(self) -> int:
        return len(self.states)

    def __len__(self):
        return self.total_dim

    def __repr__(self):
        cap = "" if self.max_excitations is None else f", max_excitations={self.max_excitations}"
        return f"FockSpace({self.mode_order}, dims={self.dims}{cap})"

    def position(self, mode: str) -> int:
        try:
            return self._pos[mode]
        except KeyError:
            raise KeyError(f"mode {mode!r} not in space {self.mode_order}") from None

    def index(self, occupation: Sequence[int] | Mapping[str, int]) -> int:
        """Flat index of a local number state."""
        if isinstance(occupation, Mapping):
            occ = [0] * len(self.mode_order)
            for m, n in occupation.items():
                occ[self.position(m)] = n
        else:
            occ = list(occupation)
        if len(occ) != len(self.dims) or any(not 0 <= n < d for n, d in zip(occ, self.dims)):
            raise IndexError(f"occupation {tuple(occ)} outside truncation {self.dims}")
        idx = self.lookup(np.asarray([occ]))[0]
        if idx < 0:
            raise IndexError(f"occupation {tuple(occ)} excluded by excitation cap")
        return int(idx)

    def occupation(self, index: int) -> tuple[int, ...]:
        return tuple(int(n) for n in self.states[index])

    def lookup(self, occupations: np.ndarray) -> np.ndarray:
        """Vectorised index lookup; -1 for states outside the space."""
        occ = np.asarray(occupations, dtype=np.int64)
        inside = np.all((occ >= 0) & (occ < np.asarray(self.dims)), axis=1)
        out = np.full(len(occ), -1, dtype=np.int64)
        if not inside.any():
            return out
        flat = np.ravel_multi_index(occ[inside].T, self.dims)
        pos = np.searchsorted(self._flat, flat)
        pos = np.minimum(pos, len(self._flat) - 1)
        hit = self._flat[pos] == flat
        res = np.where(hit, pos, -1)
        out[inside] = res
        return out

    def basis_vector(self, occupation) -> np.ndarray:
        v = np.zeros(self.total_dim, dtype=complex)
        v[self.index(occupation)] = 1.0
        return v

    def excitations(self) -> np.ndarray:
        return self.states.sum(axis=1)

    def shifted(self, shifts: Mapping[str, int]) -> tuple[np.ndarray, np.ndarray]:
        """Apply ladder shifts to every basis state.

        Returns ``(target_index, amplitude)``; ``amplitude`` is the product of
        the bosonic factors sqrt(n+1) (raise) or sqrt(n) (lower) and the
        target is -1 where the result leaves the space.
        """
        occ = self.states.copy()
        amp = np.ones(self.total_dim)
        for mode, s in shifts.items():
            p = self.position(mode)
            n = occ[:, p]
            if s > 0:
                for _ in range(s):
                    amp *= np.sqrt(n + 1.0)
                    n = n + 1
            else:
                for _ in range(-s):
                    amp *= np.sqrt(np.maximum(n, 0.0))
                    n = n - 1
            occ[:, p] = n
        target = self.lookup(occ)
        target[amp == 0] = -1
        return target, amp


@dataclass(frozen=True)
class SparseOperator:
    """Immutable CSR operator with a hermiticity flag."""

    matrix: sp.csr_matrix
    hermitian: bool = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other

    def is_hermitian(self, rtol: float = 1e-12) -> bool:
        diff = self.matrix - self.matrix.conj().T
        scale = abs(self.matrix).max() if self.matrix.nnz else 0.0
        worst = abs(diff).max() if diff.nnz else 0.0
        return worst <= rtol * max(scale, 1e-300)


def _shift_operator(space: FockSpace, shifts: Mapping[str, int]) -> sp.csr_matrix:
    target, amp = space.shifted(shifts)
    ok = target >= 0
    cols = np.nonzero(ok)[0]
    n = space.total_dim
    return sp.csr_matrix((amp[ok].astype(complex), (target[ok], cols)), shape=(n, n))


def local_operators(space: FockSpace, mode: str):
    """Truncated ``(a, a^+, n)`` for ``mode`` as :class:`SparseOperator` objects."""
    p = space.position(mode)
    a = _shift_operator(space, {mode: -1})
    n = sp.diags(space.states[:, p].astype(complex), format="csr")
    return (
        SparseOperator(a, False),
        SparseOperator(a.conj().T.tocsr(), False),
        SparseOperator(n, True),
    )


def coupling_strength(beta: float, omega_a, omega_b):
    """g = beta * sqrt(omega_a * omega_b); works elementwise on arrays."""
    wa = np.asarray(omega_a, dtype=float)
    wb = np.asarray(omega_b, dtype=float)
    if np.any(wa <= 0) or np.any(wb <= 0):
        raise ValueError("coupling_strength needs positive frequencies")
    g = beta * np.sqrt(wa * wb)
    return float(g) if g.ndim == 0 else g


def _coupling_pieces(space: FockSpace, a: str, b: str, rwa: bool):
    """Matrix of -(a^+ - a)(b^+ - b), or its number-conserving part."""
    if rwa:
        combos = [((1, -1), 1.0), ((-1, 1), 1.0)]
    else:
        # -(a^+ b^+ - a^+ b - a b^+ + a b)
        combos = [((1, 1), -1.0), ((1, -1), 1.0), ((-1, 1), 1.0), ((-1, -1), -1.0)]
    out = None
    for (sa, sb), sign in combos:
        term = sign * _shift_operator(space, {a: sa, b: sb})
        out = term if out is None else out + term
    return out


class OperatorStack:
    """Linear family of operators sharing one CSR sparsity pattern.

    ``assemble(c)`` returns ``sum_k c[k] * term[k]`` without re-deriving
    the pattern, which keeps time-dependent assembly cheap.
    """

    def __init__(self, terms: Sequence[sp.spmatrix], names: Sequence[str]):
        if len(terms) != len(names):
            raise ValueError("terms/names length mismatch")
        n = terms[0].shape[0]
        coo = [sp.coo_matrix(t) for t in terms]
        rows = np.concatenate([c.row for c in coo]).astype(np.int64)
        cols = np.concatenate([c.col for c in coo]).astype(np.int64)
        keys = np.unique(rows * n + cols)
        self.dim = n
        r, c = np.divmod(keys, n)
        pattern = sp.csr_matrix((np.ones(len(keys)), (r, c)), shape=(n, n))
        pattern.sort_indices()
        self.indptr = pattern.indptr.astype(np.int64)
        self.indices = pattern.indices.astype(np.int64)
        order_keys = np.repeat(np.arange(n), np.diff(self.indptr)) * n + self.indices
        data = np.zeros((len(terms), len(keys)), dtype=complex)
        for k, cm in enumerate(coo):
            pos = np.searchsorted(order_keys, cm.row.astype(np.int64) * n + cm.col)
            np.add.at(data[k], pos, cm.data)
        self.data = data
        self.names = list(names)

    @property
    def nnz(self) -> int:
        return self.data.shape[1]

    def assemble(self, coeffs) -> sp.csr_matrix:
        vals = np.asarray(coeffs) @ self.data
        return sp.csr_matrix((vals, self.indices, self.indptr), shape=(self.dim, self.dim))

    def term(self, name: str) -> sp.csr_matrix:
        k = self.names.index(name)
        return sp.csr_matrix((self.data[k], self.indices, self.indptr), shape=(self.dim, self.dim))


class SystemModel:
    """Unit-cell model: modes, coupling graph and truncated Fock space.

    ``idle`` stores the idle angular frequency of every mode; mode
    ``omega`` fields hold the same values at construction.
    """

    def __init__(
        self,
        modes: Sequence[Mode],
        couplings: CouplingGraph,
        max_excitations: int | None = None,
        idle: Mapping[str, float] | None = None,
    ):
        self.modes = {m.label: m for m in modes}
        if len(self.modes) != len(modes):
            raise ValueError("duplicate mode labels")
        for key in couplings.edges:
            missing = set(key) - set(self.modes)
            if missing:
                raise ValueError(f"coupling references unknown modes {sorted(missing)}")
        self.couplings = couplings
        self.space = FockSpace(
            [m.label for m in modes], [m.levels for m in modes], max_excitations=max_excitations
        )
        self.idle = dict(idle) if idle is not None else {m.label: m.omega for m in modes}
        self._structures: dict = {}

    def __repr__(self):
        return f"SystemModel(modes={self.labels}, dim={self.space.total_dim})"

    @property
    def labels(self) -> tuple[str, ...]:
        return self.space.mode_order

    @property
    def qubits(self) -> list[str]:
        return [m for m in self.labels if mode_kind(m) == "qubit"]

    @property
    def couplers(self) -> list[str]:
        return [m for m in self.labels if mode_kind(m) == "coupler"]

    def frequencies(self, **overrides: float) -> dict[str, float]:
        f = dict(self.idle)
        for k, v in overrides.items():
            if k not in f:
                raise KeyError(f"unknown mode {k!r}")
            f[k] = v
        return f

    def with_idle(self, **omegas: float) -> "SystemModel":
        idle = self.frequencies(**omegas)
        modes = [replace(self.modes[m], omega=idle[m]) for m in self.labels]
        return SystemModel(modes, self.couplings, self.space.max_excitations, idle)

    def with_truncation(self, levels: Mapping[str, int] | int | None = None, max_excitations="keep") -> "SystemModel":
        if isinstance(levels, int):
            levels = {m: levels for m in self.labels}
        levels = levels or {}
        modes = [replace(self.modes[m], levels=levels.get(m, self.modes[m].levels)) for m in self.labels]
        cap = self.space.max_excitations if max_excitations == "keep" else max_excitations
        return SystemModel(modes, self.couplings, cap, self.idle)

    def subsystem(self, labels: Iterable[str]) -> "SystemModel":
        keep = [m for m in self.labels if m in set(labels)]
        modes = [self.modes[m] for m in keep]
        return SystemModel(
            modes,
            self.couplings.restrict(keep),
            self.space.max_excitations,
            {m: self.idle[m] for m in keep},
        )

    def edges(self) -> list[tuple[str, str, float]]:
        return self.couplings.pairs(self.labels)

    def structure(self, rwa: bool = False, drives: Sequence[str] = ()) -> OperatorStack:
        """Operator stack ``[anharmonic, n_l..., coupling_e..., drive_l...]``.

        Drive terms are ``i (a^+ - a)`` for each listed mode.
        """
        key = (rwa, tuple(drives))
        if key in self._structures:
            return self._structures[key]
        space = self.space
        terms, names = [], []
        anh = np.zeros(space.total_dim)
        for p, m in enumerate(self.labels):
            n = space.states[:, p]
            anh += 0.5 * self.modes[m].alpha * n * (n - 1)
        terms.append(sp.diags(anh.astype(complex), format="csr"))
        names.append("anharmonic")
        for p, m in enumerate(self.labels):
            terms.append(sp.diags(space.states[:, p].astype(complex), format="csr"))
            names.append(f"n:{m}")
        for a, b, _ in self.edges():
            terms.append(_coupling_pieces(space, a, b, rwa))
            names.append(f"g:{a}-{b}")
        for m in drives:
            lower = _shift_operator(space, {m: -1})
            terms.append(1j * (lower.conj().T - lower))
            names.append(f"d:{m}")
        stack = OperatorStack(terms, names)
        self._structures[key] = stack
        return stack

    def coefficients(self, frequencies: Mapping[str, float], drive_values: Sequence[float] = ()) -> np.ndarray:
        """Coefficient vector matching :meth:`structure` for given frequencies."""
        missing = [m for m in self.labels if m not in frequencies]
        if missing:
            raise KeyError(f"frequencies missing for modes {missing}")
        c = [1.0]
        c += [frequencies[m] for m in self.labels]
        c += [coupling_strength(beta, frequencies[a], frequencies[b]) for a, b, beta in self.edges()]
        c += list(drive_values)
        return np.asarray(c, dtype=float)


def assemble_hamiltonian(
    model: SystemModel, frequencies: Mapping[str, float] | None = None, rwa: bool = False
) -> SparseOperator:
    """Static Hamiltonian (rad/ns) at the given mode frequencies."""
    freqs = model.frequencies() if frequencies is None else frequencies
    stack = model.structure(rwa=rwa)
    return SparseOperator(stack.assemble(model.coefficients(freqs)), hermitian=True)


def dense_hamiltonian(model: SystemModel, frequencies: Mapping[str, float] | None = None, rwa: bool = False) -> np.ndarray:
    """Dense reference assembly built from Kronecker products.

    Independent of :meth:`SystemModel.structure`; only valid for plain
    product truncations (no excitation cap) up to 4096 states.
    """
    space = model.space
    if space.max_excitations is not None:
        raise ValueError("dense_hamiltonian needs a plain product space")
    if space.total_dim > 4096:
        raise ValueError(f"dense assembly limited to 4096 states, got {space.total_dim}")
    freqs = model.frequencies() if frequencies is None else frequencies
    dims = space.dims

    def embed(op, p):
        mats = [np.eye(d) for d in dims]
        mats[p] = op
        out = np.ones((1, 1))
        for mat in mats:
            out = np.kron(out, mat)
        return out

    H = np.zeros((space.total_dim,) * 2, dtype=complex)
    lowers = {}
    for p, m in enumerate(model.labels):
        d = dims[p]
        a = np.diag(np.sqrt(np.arange(1, d)), 1)
        lowers[m] = embed(a, p)
        nvec = np.arange(d)
        mode = model.modes[m]
        H += embed(np.diag(freqs[m] * nvec + 0.5 * mode.alpha * nvec * (nvec - 1)), p)
    for a, b, beta in model.edges():
        g = beta * np.sqrt(freqs[a] * freqs[b])
        la, lb = lowers[a], lowers[b]
        if rwa:
            H += g * (la.conj().T @ lb + la @ lb.conj().T)
        else:
            H -= g * (la.conj().T - la) @ (lb.conj().T - lb)
    return H


def total_number(space: FockSpace) -> sp.csr_matrix:
    return sp.diags(space.excitations().astype(complex), format="csr")


# Unit-cell design values: f [GHz], alpha [MHz], beta to centre, beta to own coupler.
TABLE1_QUBITS = {
    "q1": (4.937, -183.0, 0.000842),
    "q2": (4.919, -181.0, 0.000882),
    "q3": (4.952, -174.0, 0.000861),
    "q4": (4.970, -180.0, 0.000904),
    "q5": (4.888, -176.0, 0.000862),
    "q6": (4.965, -176.0, 0.000838),
}
TABLE1_CENTER = (4.796, -179.0)
TABLE1_COUPLERS = {
    "c1": (3.639, -228.0, -0.0145109, 0.0194089),
    "c2": (3.621, -228.0, -0.0153071, 0.0193140),
    "c3": (3.671, -228.0, -0.0148751, 0.0193531),
    "c4": (3.704, -228.0, -0.0157235, 0.0192856),
    "c5": (3.602, -228.0, -0.0148653, 0.0193800),
    "c6": (3.703, -228.0, -0.0144436, 0.0193949),
}


def unit_cell_model(
    n_qubits: int = 2,
    levels: int | Mapping[str, int] = 3,
    max_excitations: int | None = None,
    qubits: Sequence[str] | None = None,
) -> SystemModel:
    """Unit cell with the tabulated design parameters.

    Modes are ordered ``q_i..., c, c_i...``.  ``qubits`` selects which
    peripheral qubits to include (default ``q1..q<n_qubits>``).
    """
    names = list(qubits) if qubits is not None else [f"q{j}" for j in range(1, n_qubits + 1)]
    if not 1 <= len(names) <= 6:
        raise ValueError("between 1 and 6 qubits supported")
    lev = (lambda m: levels) if isinstance(levels, int) else (lambda m: levels.get(m, 3))
    modes, pairs = [], []
    for q in names:
        f, a, _ = TABLE1_QUBITS[q]
        modes.append(Mode(q, ghz(f), mhz(a), levels=lev(q)))
    modes.append(Mode(CENTER, ghz(TABLE1_CENTER[0]), mhz(TABLE1_CENTER[1]), levels=lev(CENTER)))
    for q in names:
        cj = "c" + q[1:]
        f, a, beta_c, beta_q = TABLE1_COUPLERS[cj]
        modes.append(Mode(cj, ghz(f), mhz(a), levels=lev(cj)))
        pairs.append((CENTER, q, TABLE1_QUBITS[q][2]))
        pairs.append((q, cj, beta_q))
        pairs.append((CENTER, cj, beta_c))
    return SystemModel(modes, CouplingGraph.from_pairs(pairs), max_excitations=max_excitations)


def label_states(space: FockSpace, max_total: int) -> list[tuple[int, ...]]:
    """All occupation tuples in ``space`` with at most ``max_total`` quanta."""
    return [space.occupation(i) for i in np.nonzero(space.excitations() <= max_total)[0]]


def product_labels(space: FockSpace, active: Mapping[str, Iterable[int]]) -> list[tuple[int, ...]]:
    """Occupation tuples varying only the listed modes (others in 0)."""
    names = list(active)
    out = []
    for combo in itertools.product(*(list(active[m]) for m in names)):
        occ = [0] * len(space.mode_order)
        for m, n in zip(names, combo):
            occ[space.position(m)] = n
        out.append(tuple(occ))
    return out


def hamiltonian_at(model: SystemModel, schedule, t: float, rwa: bool = False) -> SparseOperator:
    """Hamiltonian at time ``t`` of a :class:`~mmcoupler.pulses.PulseSchedule`.

    Pulsed modes follow ``idle + f(t)``; couplings are recomputed from the
    instantaneous frequencies and charge drives add ``u(t) i (a^+ - a)``.
    """
    schedule.check_time(t)
    freqs = {m: float(w) for m, w in schedule.frequencies(model.idle, t).items()}
    drives = schedule.driven_modes
    stack = model.structure(rwa=rwa, drives=drives)
    coeffs = model.coefficients(freqs, [float(v) for v in schedule.drive_values(t)])
    return SparseOperator(stack.assemble(coeffs), hermitian=True)
