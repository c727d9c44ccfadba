"""Gate execution, fidelity metrics and pulse optimizers.

Two-qubit states are reported in the interaction frame of the idle
Hamiltonian: amplitudes on labelled eigenstates carry ``exp(i E t)``.
Computational index is ``2 n_a + n_b`` for the pair ``(a, b)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.optimize as opt
import scipy.sparse as sp

from .calibrate import LabeledSpectrum, idle_spectrum
from .effective import RATIO, DispersiveGuardError, schrieffer_wolff
from .model import FockSpace, SystemModel, local_operators, mhz
from .propagate import (
    DRIVEN,
    GeneratorSampler,
    MagnusConfig,
    Trajectory,
    bose_einstein,
    evolve,
    lindblad_liouvillian,
    schedule_sampler,
    unvec,
    vec,
)
from .pulses import (
    ChargeDrive,
    CZParams,
    PulseSchedule,
    amplitude_for_angle,
    default_buffer,
    schedule_cz,
)

log = logging.getLogger(__name__)

CZ = np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex)
PROBE_STATE = np.full(4, 0.5, dtype=complex)
_PAULI_1Q = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
PAULIS_2Q = tuple(np.kron(a, b) for a in _PAULI_1Q for b in _PAULI_1Q)


class GateError(RuntimeError):
    pass


class ProjectionError(GateError):
    """Reduced density operator has trace above one."""


class OptimizationError(GateError):
    pass


# --------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseSpec:
    """Per-mode relaxation rate ``gamma`` and pure dephasing ``kappa_phi`` (1/ns).

    Bath occupations come from ``nbar`` when given for a mode, otherwise
    from the Bose-Einstein law at ``temperature`` (K).
    """

    gamma: Mapping[str, float] = field(default_factory=dict)
    kappa_phi: Mapping[str, float] = field(default_factory=dict)
    temperature: float = 0.0
    nbar: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("gamma", "kappa_phi", "nbar"):
            for m, v in getattr(self, name).items():
                if not v >= 0:
                    raise ValueError(f"{name}[{m}] must be non-negative, got {v}")
        if not self.temperature >= 0:
            raise ValueError("temperature must be non-negative")

    @property
    def modes(self) -> list[str]:
        out = []
        for m in list(self.gamma) + list(self.kappa_phi):
            if m not in out:
                out.append(m)
        return out

    def occupation(self, mode: str, omega: float | None = None) -> float:
        if mode in self.nbar:
            return float(self.nbar[mode])
        if omega is None or self.temperature == 0:
            return 0.0
        return bose_einstein(omega, self.temperature)

    def rates(self, mode: str, omega: float | None = None) -> tuple[float, float, float]:
        return (
            float(self.gamma.get(mode, 0.0)),
            float(self.kappa_phi.get(mode, 0.0)),
            self.occupation(mode, omega),
        )

    def scaled(self, factor: float) -> "NoiseSpec":
        """All rates multiplied by ``factor`` (i.e. coherence times divided)."""
        return NoiseSpec(
            {m: v * factor for m, v in self.gamma.items()},
            {m: v * factor for m, v in self.kappa_phi.items()},
            self.temperature,
            dict(self.nbar),
        )

    @classmethod
    def from_times(cls, T1: Mapping[str, float], T2star: Mapping[str, float], temperature: float = 0.0, nbar=None):
        inv = lambda x: 0.0 if math.isinf(x) else 1.0 / x  # noqa: E731
        for d in (T1, T2star):
            for m, v in d.items():
                if not v > 0:
                    raise ValueError(f"coherence time for {m} must be positive")
        return cls({m: inv(v) for m, v in T1.items()}, {m: inv(v) for m, v in T2star.items()}, temperature, nbar or {})

    @classmethod
    def uniform(cls, modes: Sequence[str], T1: float, T2star: float | None = None, temperature: float = 0.0):
        T2star = 2.0 * T1 if T2star is None else T2star
        return cls.from_times({m: T1 for m in modes}, {m: T2star for m in modes}, temperature)


# --------------------------------------------------------------------------
# two-qubit reduction


class QubitFrame:
    """Partial trace onto selected qubits in the labelled eigenbasis.

    Labelled eigenstates whose ``qubits`` occupations are all in {0, 1}
    are grouped by the occupations of the remaining modes; amplitudes
    within a group form one column of the reduced amplitude matrix.

    Parameters
    ----------
    labeled : LabeledSpectrum
    qubits : sequence of str
        First entry is the most significant bit.
    """

    def __init__(self, labeled: LabeledSpectrum, qubits: Sequence[str] = ("q1", "q2")):
        self.labeled = labeled
        self.qubits = tuple(qubits)
        pos = [labeled.space.position(q) for q in self.qubits]
        nq = len(pos)
        cols, comp, rest = [], [], []
        rest_map: dict[tuple, int] = {}
        for key, col in labeled.label_map.items():
            bits = [key[p] for p in pos]
            if any(b > 1 for b in bits):
                continue
            r = list(key)
            for p in pos:
                r[p] = 0
            r = tuple(r)
            if r not in rest_map:
                rest_map[r] = len(rest_map)
            cols.append(col)
            comp.append(sum(b << (nq - 1 - i) for i, b in enumerate(bits)))
            rest.append(rest_map[r])
        self.dim = 2**nq
        self.cols = np.array(cols, dtype=int)
        self.comp = np.array(comp, dtype=int)
        self.rest = np.array(rest, dtype=int)
        self.n_rest = len(rest_map)
        self.vacuum_rest = rest_map.get(tuple([0] * len(labeled.space.mode_order)))
        self.W = labeled.eigenvectors[:, self.cols]
        ground = labeled.index(tuple([0] * len(labeled.space.mode_order)))
        self.E = labeled.eigenvalues[self.cols] - labeled.eigenvalues[ground]
        self.computational = labeled.basis(labeled.computational_labels(self.qubits))

    def amplitude_matrix(self, psi, t: float = 0.0) -> np.ndarray:
        """``(dim, n_rest)`` interaction-frame amplitudes; batches add leading axes."""
        psi = np.asarray(psi)
        amps = (psi @ self.W.conj()) * np.exp(1j * self.E * t)
        out = np.zeros(psi.shape[:-1] + (self.dim, self.n_rest), dtype=complex)
        out[..., self.comp, self.rest] = amps
        return out

    def reduce(self, psi, t: float = 0.0) -> np.ndarray:
        A = self.amplitude_matrix(psi, t)
        return A @ np.swapaxes(A.conj(), -1, -2)

    def reduce_density(self, rho, t: float = 0.0) -> np.ndarray:
        """Reduced operator of a (not necessarily hermitian) full-space operator."""
        ph = np.exp(1j * self.E * t)
        R = (self.W.conj().T @ rho @ self.W) * np.outer(ph, ph.conj())
        out = np.zeros((self.dim, self.dim), dtype=complex)
        same = self.rest[:, None] == self.rest[None, :]
        i, j = np.nonzero(same)
        np.add.at(out, (self.comp[i], self.comp[j]), R[i, j])
        return out


def phase_correction(phi01: float, phi10: float) -> np.ndarray:
    """``S = diag(1, e^{i phi01}, e^{i phi10}, e^{i(phi01 + phi10)})``; apply as ``S rho S^+``."""
    return np.diag(np.exp(1j * np.array([0.0, phi01, phi10, phi01 + phi10])))


def state_fidelity(rho, rho_ideal, atol: float = 1e-6) -> float:
    """``Tr[rho rho_ideal]``."""
    rho = np.asarray(rho)
    tr = np.trace(rho).real
    if tr > 1.0 + atol:
        raise ProjectionError(f"reduced state has trace {tr:.9f} > 1")
    return float(np.real(np.trace(rho @ rho_ideal)))


# --------------------------------------------------------------------------
# CZ gate


@dataclass
class GateResult:
    """Outcome of one gate run.

    ``populations`` maps labelled states to time series of the frame
    populations; ``occupations`` maps modes to ``<n>`` time series.
    """

    times: np.ndarray
    final_state: np.ndarray
    rho: np.ndarray
    fidelity: float
    phases: dict = field(default_factory=dict)
    cp_trace: np.ndarray | None = None
    populations: dict = field(default_factory=dict)
    occupations: dict = field(default_factory=dict)
    leakage: dict = field(default_factory=dict)
    initial: np.ndarray | None = None


def check_schedule(model: SystemModel, schedule: PulseSchedule):
    unknown = [m for m in list(schedule.flux) + schedule.driven_modes if m not in model.labels]
    if unknown:
        raise GateError(f"schedule acts on modes {unknown} absent from the model {model.labels}")


def _wrap(x):
    return np.mod(x, 2 * np.pi)


class CZProcess:
    """Evolved computational columns of one schedule.

    ``A[j]`` is the reduced amplitude matrix of the evolved state that
    started in computational eigenstate ``j``.
    """

    def __init__(self, frame: QubitFrame, columns: np.ndarray, t: float):
        self.frame = frame
        self.t = t
        self.columns = columns
        self.A = frame.amplitude_matrix(columns, t)

    def _combo(self, coeffs):
        return np.tensordot(np.asarray(coeffs, dtype=complex), self.A, axes=1)

    def reduced(self, coeffs) -> np.ndarray:
        A = self._combo(coeffs)
        return A @ A.conj().T

    def phases(self) -> dict:
        s = 1 / math.sqrt(2)
        phi = {}
        for name, j in (("01", 1), ("10", 2), ("11", 3)):
            c = np.zeros(4)
            c[0] = c[j] = s
            phi[name] = float(np.angle(self.reduced(c)[0, j]))
        phi["cp"] = float(_wrap(phi["11"] - phi["10"] - phi["01"]))
        return phi

    def correction(self) -> np.ndarray:
        p = self.phases()
        return phase_correction(p["01"], p["10"])

    def channel(self, X) -> np.ndarray:
        """Phase-corrected image of a 4x4 operator under the process."""
        S = self.correction()
        X = np.asarray(X, dtype=complex)
        out = np.einsum("ij,iar,jbr->ab", X, self.A, self.A.conj())
        return S @ out @ S.conj().T


def evolve_computational(
    model: SystemModel,
    labeled: LabeledSpectrum,
    schedule: PulseSchedule,
    config: MagnusConfig = MagnusConfig(),
    pair=("q1", "q2"),
    t_grid=None,
    rwa: bool = False,
):
    check_schedule(model, schedule)
    frame = QubitFrame(labeled, pair)
    t_grid = np.array([0.0, schedule.duration]) if t_grid is None else np.asarray(t_grid, dtype=float)
    traj = evolve(schedule_sampler(model, schedule, rwa), config, frame.computational.T, t_grid)
    return frame, traj


def run_cz(
    model: SystemModel,
    labeled: LabeledSpectrum,
    schedule: PulseSchedule,
    initial=PROBE_STATE,
    config: MagnusConfig = MagnusConfig(),
    pair=("q1", "q2"),
    n_snapshots: int = 2,
    ideal: np.ndarray = CZ,
) -> GateResult:
    """Run the flux schedule and compare with ``ideal`` on ``initial``.

    ``initial`` holds the four computational amplitudes (order 00, 01,
    10, 11); centre and couplers start empty.
    """
    c = np.asarray(initial, dtype=complex)
    if c.shape != (4,):
        raise ValueError("initial must be four computational amplitudes")
    c = c / np.linalg.norm(c)
    times = np.linspace(0.0, schedule.duration, max(int(n_snapshots), 2))
    frame, traj = evolve_computational(model, labeled, schedule, config, pair, times)
    cols = traj.states  # (T, 4, dim)
    cp = np.zeros(times.size)
    for k, t in enumerate(times):
        cp[k] = CZProcess(frame, cols[k], t).phases()["cp"]
    proc = CZProcess(frame, cols[-1], times[-1])
    S = proc.correction()
    rho = S @ proc.reduced(c) @ S.conj().T
    target = ideal @ c
    fid = state_fidelity(rho, np.outer(target, target.conj()))
    psi_t = np.tensordot(c, cols, axes=([0], [1]))  # (T, dim)
    from .analysis import leakage_report, mode_occupations

    pops = {}
    amps = np.abs(psi_t @ labeled.eigenvectors.conj()) ** 2
    for key, col in labeled.label_map.items():
        pops[key] = amps[:, col]
    occ = mode_occupations(psi_t, labeled.space)
    leak = leakage_report(Trajectory(times, psi_t), labeled)
    return GateResult(
        times=times,
        final_state=psi_t[-1],
        rho=rho,
        fidelity=fid,
        phases=proc.phases(),
        cp_trace=cp,
        populations=pops,
        occupations=occ,
        leakage=leak,
        initial=c,
    )


def cz_process(model, labeled, params: CZParams, config: MagnusConfig = MagnusConfig(), pair=("q1", "q2")) -> CZProcess:
    sched = schedule_cz(params, pair)
    frame, traj = evolve_computational(model, labeled, sched, config, pair)
    return CZProcess(frame, traj.final, sched.duration)


def cz_state_infidelity(proc: CZProcess, initial=PROBE_STATE, ideal=CZ) -> float:
    c = np.asarray(initial, dtype=complex)
    c = c / np.linalg.norm(c)
    rho = proc.channel(np.outer(c, c.conj()))
    t = ideal @ c
    return 1.0 - state_fidelity(rho, np.outer(t, t.conj()))


def cz_average_infidelity(proc: CZProcess, ideal=CZ) -> float:
    return 1.0 - average_gate_fidelity_unitary(proc.channel, ideal)


# --------------------------------------------------------------------------
# seeding and optimization


def _sw_seed(model, tau, sigma_q, sigma_c, pair):
    qa, qb = pair
    ca, cb = "c" + qa[1:], "c" + qb[1:]
    f0 = model.frequencies()
    alpha = model.modes[qa].alpha
    g_target = math.pi / (tau - 2 * default_buffer(sigma_q) - default_buffer(sigma_c))

    def resid(x):
        f = dict(f0)
        for m, dx in zip((qa, qb, ca, cb), x):
            f[m] += dx
        try:
            e = schrieffer_wolff(model, f, pair)
        except DispersiveGuardError:
            return np.full(4, 1e3)
        return np.array(
            [
                e.omega[qb] - e.omega["c"],
                e.omega[qa] + alpha - e.omega[qb],
                abs(e.g_cq2) - g_target,
                abs(e.g_cq1) - RATIO * g_target,
            ]
        )

    x0 = np.array([f0["c"] - alpha - f0[qa], f0["c"] - f0[qb], 2 * np.pi * 0.8, 2 * np.pi * 0.8])
    return opt.least_squares(resid, x0, x_scale=[0.01, 0.01, 0.5, 0.5]).x


def _block(space: FockSpace, w, V, labels) -> np.ndarray:
    """Effective hermitian block on the given local states (orthonormalized projection)."""
    P = np.array([space.index(lb) for lb in labels])
    cols = np.argsort((np.abs(V[P, :]) ** 2).sum(axis=0))[::-1][: len(P)]
    u, _, vh = np.linalg.svd(V[np.ix_(P, cols)])
    M = u @ vh
    return M @ np.diag(w[cols]) @ M.conj().T


def plateau_blocks(model: SystemModel, offsets: Mapping[str, float], pair=("q1", "q2")):
    """One- and two-excitation effective blocks at fixed flux offsets.

    Returns ``(h1, h2)`` on ``{|0 1 0>, |0 0 1>}`` and
    ``{|2 0 0>, |1 1 0>, |1 0 1>}`` in ``(pair[0], pair[1], c)`` order.
    """
    from .model import dense_hamiltonian

    qa, qb = pair
    f = model.frequencies()
    for m, dx in offsets.items():
        f[m] += dx
    w, V = np.linalg.eigh(dense_hamiltonian(model, f))
    sp_ = model.space

    def lab(na, nb, nc):
        return {qa: na, qb: nb, "c": nc}

    h1 = _block(sp_, w, V, [lab(0, 1, 0), lab(0, 0, 1)])
    h2 = _block(sp_, w, V, [lab(2, 0, 0), lab(1, 1, 0), lab(1, 0, 1)])
    return h1, h2


def cz_seed(
    model: SystemModel,
    tau: float = 60.0,
    sigma_q: float = 1.0,
    sigma_c: float = 3.0,
    pair=("q1", "q2"),
    labeled: LabeledSpectrum | None = None,
    config: MagnusConfig = MagnusConfig(dt=0.05),
) -> CZParams:
    """Starting point for the CZ optimizer.

    Coupler-eliminated estimate first, then a solve on the exact
    plateau Hamiltonian of the pair sub-model for both resonances and the
    sqrt(3/2) ratio at a trial pulse area.  With ``labeled`` the
    effective plateau length is finally tuned on the full dynamics.
    """
    qa, qb = pair
    ca, cb = "c" + qa[1:], "c" + qb[1:]
    sub = model.subsystem([qa, qb, "c", ca, cb]).with_truncation(max_excitations=None)
    x = _sw_seed(sub, tau, sigma_q, sigma_c, pair)

    def solve(t_eff, x0):
        def resid(x):
            h1, h2 = plateau_blocks(sub, dict(zip((qa, qb, ca, cb), x)), pair)
            g2 = abs(h1[0, 1])
            g1 = abs(h2[0, 2]) / math.sqrt(2.0)
            return 100.0 * np.array(
                [
                    (h1[0, 0] - h1[1, 1]).real,
                    (h2[0, 0] - h2[1, 1]).real,
                    (h2[2, 2] - h2[1, 1]).real,
                    g1 - RATIO * g2,
                    g2 - math.pi / t_eff,
                ]
            )

        return opt.least_squares(resid, x0, x_scale=[0.01, 0.01, 0.3, 0.3]).x

    def params(x):
        return CZParams(float(x[0]), float(x[1]), float(x[2]), float(x[3]), sigma_c, sigma_q, tau)

    plateau = tau - 2 * default_buffer(sigma_q) - 2 * default_buffer(sigma_c)
    if labeled is None:
        return params(solve(plateau, x))
    cache = {}

    def objective(t_eff):
        xs = solve(t_eff, x)
        val = cz_state_infidelity(cz_process(model, labeled, params(xs), config, pair))
        cache[t_eff] = (val, xs)
        return val

    opt.minimize_scalar(objective, bounds=(0.6 * plateau, 1.1 * plateau), method="bounded", options={"xatol": 0.05})
    best = min(cache.values(), key=lambda v: v[0])
    return params(best[1])


@dataclass
class OptimizationOutcome:
    params: CZParams
    infidelity: float
    evaluations: int
    trace: list = field(default_factory=list)
    initial_infidelity: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "infidelity": self.infidelity,
            "evaluations": self.evaluations,
            "initial_infidelity": self.initial_infidelity,
        }


class _Done(Exception):
    pass


DEFAULT_STEPS = np.array([mhz(2.0), mhz(2.0), mhz(20.0), mhz(20.0), 0.3])


def optimize_cz(
    model: SystemModel,
    labeled: LabeledSpectrum,
    seed: CZParams,
    objective: str = "state",
    config: MagnusConfig = MagnusConfig(dt=0.05),
    pair=("q1", "q2"),
    max_evals: int = 600,
    target: float = 1e-7,
    steps=None,
    rng: np.random.Generator | None = None,
    callback: Callable | None = None,
    stall: int = 150,
    stall_rtol: float = 0.01,
) -> OptimizationOutcome:
    """Nelder-Mead over ``(A_q1, A_q2, A_c1, A_c2, sigma_c)``.

    One restart from a perturbed optimum; stops early once the objective
    drops below ``target`` or after ``stall`` evaluations without a
    relative improvement of ``stall_rtol``.  ``objective`` is ``"state"`` (probe
    superposition) or ``"average"``.
    """
    if objective not in ("state", "average"):
        raise ValueError("objective must be 'state' or 'average'")
    rng = np.random.default_rng(0) if rng is None else rng
    steps = DEFAULT_STEPS if steps is None else np.asarray(steps, dtype=float)
    x_seed = seed.free_vector()
    trace: list = []
    best = {"f": math.inf, "x": x_seed.copy(), "n": 0}

    def f(z):
        x = x_seed + z * steps
        p = seed.with_free(x)
        if p.sigma_c <= 0.05:
            val = 1.0 + (0.05 - p.sigma_c)
        else:
            try:
                proc = cz_process(model, labeled, p, config, pair)
            except ValueError:
                val = 1.0 + abs(p.sigma_c)
            else:
                val = cz_state_infidelity(proc) if objective == "state" else cz_average_infidelity(proc)
        if not np.isfinite(val):
            raise OptimizationError(f"non-finite objective at {p.to_dict()}")
        trace.append((len(trace) + 1, float(val)))
        if callback is not None:
            callback(len(trace), p, val)
        if val < best["f"]:
            if val < (1.0 - stall_rtol) * best["f"]:
                best["n"] = len(trace)
            best["f"], best["x"] = float(val), x.copy()
        if val < target or len(trace) >= max_evals:
            raise _Done
        if len(trace) - best["n"] >= stall:
            raise _Done
        return val

    try:
        f(np.zeros(5))
        z0 = np.zeros(5)
        simplex = np.vstack([z0, np.eye(5)])
        opt.minimize(f, z0, method="Nelder-Mead", options={"initial_simplex": simplex, "maxfev": max_evals, "xatol": 1e-4, "fatol": 1e-9})
        zb = (best["x"] - x_seed) / steps
        restart = np.vstack([zb, zb + 0.25 * np.diag(rng.choice([-1.0, 1.0], 5))])
        opt.minimize(f, zb, method="Nelder-Mead", options={"initial_simplex": restart, "maxfev": max_evals - len(trace), "xatol": 1e-5, "fatol": 1e-10})
    except _Done:
        pass
    return OptimizationOutcome(seed.with_free(best["x"]), best["f"], len(trace), trace, trace[0][1] if trace else math.nan)


# --------------------------------------------------------------------------
# average fidelity


def average_gate_fidelity_unitary(process: Callable, ideal: np.ndarray) -> float:
    """Haar-average state fidelity of a linear map against a unitary.

    ``process`` maps a 4x4 input operator to the 4x4 output operator.
    Uses ``(1/16)[Tr G1(I) G2(I) + (1/5) sum_j Tr G1(f_j) G2(f_j)]`` over
    the fifteen non-identity Paulis.
    """
    U = np.asarray(ideal, dtype=complex)
    d = U.shape[0]
    if d != 4:
        raise ValueError("two-qubit ideal expected")
    # linearity spot check
    rng = np.random.default_rng(12345)
    X = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    Y = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    lhs = process(X + 0.5 * Y)
    rhs = process(X) + 0.5 * process(Y)
    if np.max(np.abs(lhs - rhs)) > 1e-8 * max(1.0, np.max(np.abs(rhs))):
        raise GateError("process is not linear")
    out = np.trace(U @ U.conj().T @ process(PAULIS_2Q[0])).real
    acc = 0.0
    for P in PAULIS_2Q[1:]:
        acc += np.trace(U @ P @ U.conj().T @ process(P)).real
    return float((out + acc / 5.0) / 16.0)


def haar_states(n: int, d: int = 4, rng: np.random.Generator | None = None) -> np.ndarray:
    rng = np.random.default_rng() if rng is None else rng
    z = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def haar_average_fidelity(process: Callable, ideal, n: int = 10_000, rng=None) -> tuple[float, float]:
    """Monte Carlo mean of ``<psi|U^+ E(psi) U|psi>`` and its standard error."""
    psis = haar_states(n, ideal.shape[0], rng)
    vals = np.empty(n)
    for k, psi in enumerate(psis):
        t = ideal @ psi
        vals[k] = np.real(t.conj() @ process(np.outer(psi, psi.conj())) @ t)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))


# --------------------------------------------------------------------------
# decoherence


@dataclass(frozen=True)
class ThreeModeGate:
    """Resonant CZ on the coupler-eliminated ``(q1, q2, c)`` model.

    The frame rotates at the centre frequency times the total excitation
    number, so ``q2`` and ``c`` are at zero and ``q1`` sits at
    ``-alpha_q1``.  ``omega_c`` only sets thermal occupations.
    """

    tau: float = 60.0
    alpha: tuple = (mhz(-183.0), mhz(-181.0), mhz(-179.0))
    levels: int = 3
    max_excitations: int = 2
    omega_c: float = 2 * np.pi * 4.796

    modes = ("q1", "q2", "c")

    @property
    def g2(self) -> float:
        return math.pi / self.tau

    @property
    def g1(self) -> float:
        return RATIO * self.g2

    def space(self) -> FockSpace:
        return FockSpace(self.modes, (self.levels,) * 3, self.max_excitations)

    def hamiltonian(self, space: FockSpace | None = None) -> sp.csr_matrix:
        space = self.space() if space is None else space
        ops = {m: [o.matrix for o in local_operators(space, m)] for m in self.modes}
        H = -self.alpha[0] * ops["q1"][2]
        for m, a in zip(self.modes, self.alpha):
            n = ops[m][2]
            H = H + 0.5 * a * (n @ n - n)
        for q, g in (("q1", self.g1), ("q2", self.g2)):
            hop = ops["c"][1] @ ops[q][0]
            H = H + g * (hop + hop.conj().T)
        return sp.csr_matrix(H)

    def frequencies(self) -> dict:
        return {"q1": self.omega_c - self.alpha[0], "q2": self.omega_c, "c": self.omega_c}


def _computational_columns(space: FockSpace, qubits=("q1", "q2")) -> list[int]:
    out = []
    for bits in range(4):
        occ = {qubits[0]: bits >> 1, qubits[1]: bits & 1}
        out.append(space.index(occ))
    return out


def _project_trace(space: FockSpace, rho, qubits=("q1", "q2")) -> np.ndarray:
    pa, pb = space.position(qubits[0]), space.position(qubits[1])
    st = space.states
    keep = np.nonzero((st[:, pa] <= 1) & (st[:, pb] <= 1))[0]
    comp = 2 * st[keep, pa] + st[keep, pb]
    rest = [tuple(np.delete(st[i], [pa, pb])) for i in keep]
    out = np.zeros((4, 4), dtype=complex)
    for x, i in enumerate(keep):
        for y, j in enumerate(keep):
            if rest[x] == rest[y]:
                out[comp[x], comp[y]] += rho[i, j]
    return out


def _fbar_from_images(images: dict, ideal=CZ) -> float:
    """F-bar from reduced images of the sixteen matrix units ``images[(i, j)]``."""
    s = 1 / math.sqrt(2)

    def G(X):
        return sum(X[i, j] * images[i, j] for i in range(4) for j in range(4))

    phi = {}
    for j in (1, 2):
        c = np.zeros(4)
        c[0] = c[j] = s
        phi[j] = np.angle(G(np.outer(c, c))[0, j])
    S = phase_correction(phi[1], phi[2])
    return average_gate_fidelity_unitary(lambda X: S @ G(X) @ S.conj().T, ideal)


def lindblad_average_fidelity(gate: ThreeModeGate, noise: NoiseSpec, config: MagnusConfig = MagnusConfig(dt=0.2)) -> float:
    """Average fidelity from full master-equation evolution of all matrix units."""
    space = gate.space()
    H = gate.hamiltonian(space)
    L = lindblad_liouvillian(H, noise, space, gate.frequencies())
    d = space.total_dim
    sampler = GeneratorSampler(lambda t: L, d * d, hamiltonian=False)
    comp = _computational_columns(space)
    inputs, keys = [], []
    for i in range(4):
        for j in range(4):
            rho = np.zeros((d, d), dtype=complex)
            rho[comp[i], comp[j]] = 1.0
            inputs.append(vec(rho))
            keys.append((i, j))
    traj = evolve(sampler, config, np.array(inputs), [0.0, gate.tau])
    images = {k: _project_trace(space, unvec(v, d)) for k, v in zip(keys, traj.final)}
    return _fbar_from_images(images)


# 7-state closed-form model: |q1 q2 c> with at most two quanta and q2 <= 1, c <= 1
_SEVEN = ((0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (2, 0, 0), (1, 1, 0), (1, 0, 1))


def _seven_state_propagator(gate: ThreeModeGate, t: float) -> np.ndarray:
    from .effective import analytic_propagators, resonant_manifold

    mm = resonant_manifold(0.0, gate.alpha[0], gate.g2)
    U1, U2 = analytic_propagators(mm, t)
    U = np.zeros((7, 7), dtype=complex)
    U[0, 0] = 1.0
    U[1:4, 1:4] = U1
    U[4:, 4:] = U2
    return U


def _seven_state_ops():
    idx = {s: i for i, s in enumerate(_SEVEN)}
    lower, number = [], []
    for p in range(3):
        A = np.zeros((7, 7))
        for s, i in idx.items():
            if s[p] > 0:
                t = list(s)
                t[p] -= 1
                if tuple(t) in idx:
                    A[idx[tuple(t)], i] = math.sqrt(s[p])
        lower.append(A)
        number.append(np.diag([float(s[p]) for s in _SEVEN]))
    return lower, number


def _seven_reduce(rho) -> np.ndarray:
    out = np.zeros((4, 4), dtype=complex)
    comp = [(0, 0), (0, 1), (1, 0), (1, 1)]
    idx = {s: i for i, s in enumerate(_SEVEN)}
    for a, sa in enumerate(comp):
        for b, sb in enumerate(comp):
            for nc in (0, 1):
                ia, ib = idx.get((*sa, nc)), idx.get((*sb, nc))
                if ia is not None and ib is not None:
                    out[a, b] += rho[ia, ib]
    return out


def _dissipator(L, rho):
    LdL = L.conj().T @ L
    return L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)


def perturbative_coefficients(gate: ThreeModeGate = ThreeModeGate(), nodes: int = 80) -> dict:
    """Infidelity per unit rate and per ``tau`` of each jump channel.

    First-order expansion of the master equation around the closed-form
    propagators of the resonant gate.  Keys ``("relax", mode)`` for ``a``
    and ``("dephase", mode)`` for ``2 D[n]`` (so the value multiplies
    ``kappa_phi``).
    """
    tau = gate.tau
    UT = _seven_state_propagator(gate, tau)
    comp = [0, 2, 3, 5]
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    ts, ws = 0.5 * tau * (xs + 1), 0.5 * tau * ws
    Us = [_seven_state_propagator(gate, t) for t in ts]
    lower, number = _seven_state_ops()

    def unit(i, j):
        r = np.zeros((7, 7), dtype=complex)
        r[comp[i], comp[j]] = 1.0
        return r

    ideal_images = {(i, j): _seven_reduce(UT @ unit(i, j) @ UT.conj().T) for i in range(4) for j in range(4)}
    s = 1 / math.sqrt(2)
    phi = {}
    for j in (1, 2):
        c = np.zeros(4)
        c[0] = c[j] = s
        X = np.outer(c, c)
        phi[j] = np.angle(sum(X[a, b] * ideal_images[a, b] for a in range(4) for b in range(4))[0, j])
    S = phase_correction(phi[1], phi[2])

    def first_order(Lop, weight):
        images = {}
        for i in range(4):
            for j in range(4):
                r0 = unit(i, j)
                acc = np.zeros((7, 7), dtype=complex)
                for U, w in zip(Us, ws):
                    Lt = U.conj().T @ Lop @ U
                    acc += w * _dissipator(Lt, r0)
                images[i, j] = weight * _seven_reduce(UT @ acc @ UT.conj().T)
        return images

    def fbar_linear(images):
        G = lambda X: S @ sum(X[a, b] * images[a, b] for a in range(4) for b in range(4)) @ S.conj().T  # noqa: E731
        tr = np.trace(CZ @ CZ.conj().T @ G(PAULIS_2Q[0])).real
        acc = sum(np.trace(CZ @ P @ CZ.conj().T @ G(P)).real for P in PAULIS_2Q[1:])
        return (tr + acc / 5.0) / 16.0

    out = {}
    for p, m in enumerate(gate.modes):
        out["relax", m] = -fbar_linear(first_order(lower[p], 1.0)) / tau
        out["dephase", m] = -fbar_linear(first_order(number[p], 2.0)) / tau
    return out


def perturbative_average_fidelity(gate: ThreeModeGate, noise: NoiseSpec, coefficients: dict | None = None) -> float:
    """First-order average fidelity at zero bath occupation."""
    coef = perturbative_coefficients(gate) if coefficients is None else coefficients
    freqs = gate.frequencies()
    infid = 0.0
    for m in gate.modes:
        g, k, nb = noise.rates(m, freqs[m])
        if nb > 0:
            raise ValueError("perturbative route is implemented at zero bath occupation")
        if (g + 2 * k) * gate.tau > 0.1:
            warnings.warn(f"rate x tau = {(g + 2 * k) * gate.tau:.3g} for {m}; first order unreliable", stacklevel=2)
        infid += gate.tau * (g * coef["relax", m] + k * coef["dephase", m])
    return 1.0 - infid


def average_fidelity_with_decoherence(
    gate: ThreeModeGate, noise: NoiseSpec, route: str = "lindblad", config: MagnusConfig = MagnusConfig(dt=0.2)
) -> float:
    """Average CZ fidelity under relaxation and dephasing.

    ``route="lindblad"`` evolves the master equation of the effective model;
    ``route="perturbative"`` uses the first-order expansion around the
    closed-form propagators.
    """
    if route == "lindblad":
        return lindblad_average_fidelity(gate, noise, config)
    if route == "perturbative":
        return perturbative_average_fidelity(gate, noise)
    raise ValueError(f"unknown route {route!r}")


def closed_form_decoherence_infidelity(
    tau: float,
    T1: Mapping[str, float],
    T2star: Mapping[str, float],
    nbar: Mapping[str, float] | None = None,
) -> float:
    """Linear first-order average infidelity of the resonant CZ.

    ``T1`` and ``T2star`` map ``q1``, ``q2`` and ``c`` to times in ns
    (``inf`` allowed).  With ``nbar`` the finite-temperature form is used.
    """
    nb = nbar or {}
    rate = lambda T: 0.0 if math.isinf(T) else 1.0 / T  # noqa: E731
    relax = {"q1": 73 / 160, "q2": 7 / 32, "c": 1 / 8}
    excite = {"q1": 1753 / 1280, "q2": 37 / 32, "c": 253 / 320}
    dephase = {"q1": 6283 / 10240, "q2": 2963 / 10240, "c": 131 / 640}
    total = 0.0
    for m in ("q1", "q2", "c"):
        g = rate(T1.get(m, math.inf))
        n = nb.get(m, 0.0)
        total += relax[m] * g * (n + 1) + excite[m] * g * n + dephase[m] * rate(T2star.get(m, math.inf))
    return tau * total


# --------------------------------------------------------------------------
# single-qubit gates


def ideal_rotation(theta: float, phi: float = 0.0) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -np.exp(1j * phi) * s], [np.exp(-1j * phi) * s, c]], dtype=complex)


@dataclass
class SingleQubitResult:
    fidelity: float
    rho: np.ndarray
    final_state: np.ndarray
    drive: ChargeDrive


def run_single_qubit_gate(
    model: SystemModel,
    labeled: LabeledSpectrum,
    drive: ChargeDrive,
    simultaneous: Sequence[ChargeDrive] = (),
    initial=None,
    theta: float = math.pi,
    phi: float = 0.0,
    config: MagnusConfig = DRIVEN,
) -> SingleQubitResult:
    """Drive ``drive.mode`` and score its reduced state against ``U_{theta,phi}``.

    ``initial`` is a labelled state (tuple or mapping); default vacuum.
    The target qubit's initial reduced state must be pure.
    """
    for d in (drive, *simultaneous):
        if d.mode not in model.labels:
            raise GateError(f"drive on unknown mode {d.mode!r}")
    target = drive.mode
    init_label = labeled.key(initial if initial is not None else {})
    frame = QubitFrame(labeled, (target,))
    psi0 = labeled.vector(init_label)
    duration = max(d.end for d in (drive, *simultaneous))
    sched = PulseSchedule(duration, {}, [drive, *simultaneous])
    traj = evolve(schedule_sampler(model, sched), config, psi0, [0.0, duration])
    rho = frame.reduce(traj.final, duration)
    n0 = init_label[labeled.space.position(target)]
    if n0 > 1:
        raise GateError("target qubit must start in 0 or 1")
    ket = ideal_rotation(theta, phi)[:, n0]
    fid = state_fidelity(rho, np.outer(ket, ket.conj()))
    return SingleQubitResult(fid, rho, traj.final, drive)


def _golden(f, lo, hi, tol, max_iter=60):
    """Golden-section minimum of ``f`` on ``[lo, hi]``; returns ``(x, f(x), lo, hi)``."""
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > tol and it < max_iter:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        it += 1
    return (c, fc, a, b) if fc < fd else (d, fd, a, b)


def _bracketed_min(f, x0, half, tol):
    """Golden-section minimum around ``x0``; widens the bracket once if the minimum sits on an edge."""
    for attempt in range(2):
        x, fx, _, _ = _golden(f, x0 - half, x0 + half, tol)
        if min(x - (x0 - half), (x0 + half) - x) > 2 * tol:
            return x, fx
        half *= 3.0
    raise OptimizationError(f"minimum not bracketed around {x0:.6g} (half-width {half / 3:.3g})")


def optimize_single_qubit(
    model: SystemModel,
    labeled: LabeledSpectrum,
    mode: str,
    theta: float = math.pi,
    phi: float = 0.0,
    duration: float = 20.0,
    width: float = 4.0,
    simultaneous: Sequence[ChargeDrive] = (),
    initial=None,
    config: MagnusConfig = DRIVEN,
    freq_window: float = mhz(2.0),
    amp_window: float = 0.05,
    tol: tuple[float, float] = (mhz(1e-3), 1e-4),
    max_rounds: int = 50,
):
    """Alternating golden-section search over drive frequency and amplitude.

    Seeds are the labelled transition frequency of ``mode`` and the
    weak-drive amplitude for ``theta``.  ``freq_window`` (rad/ns) and
    ``amp_window`` (fraction of the seed) are initial half-widths.

    Returns
    -------
    (frequency, amplitude, infidelity)
    """
    if mode not in model.labels:
        raise GateError(f"drive on unknown mode {mode!r}")
    base = labeled.key(initial if initial is not None else {})
    flipped = list(base)
    p = labeled.space.position(mode)
    flipped[p] = 1 - base[p] if base[p] <= 1 else base[p] - 1
    w = abs(labeled.energy(tuple(flipped)) - labeled.energy(base))
    a = amplitude_for_angle(theta, width, duration)

    def infid(wd, amp):
        d = ChargeDrive(mode, amp, width, wd, phi, duration)
        return 1.0 - run_single_qubit_gate(model, labeled, d, simultaneous, initial, theta, phi, config).fidelity

    hw, ha = freq_window, amp_window * a
    val = math.inf
    for _ in range(max_rounds):
        w_new, val = _bracketed_min(lambda x: infid(x, a), w, hw, tol[0])
        a_new, val = _bracketed_min(lambda x: infid(w_new, x), a, ha, tol[1])
        dw, da = abs(w_new - w), abs(a_new - a)
        w, a = w_new, a_new
        if dw < tol[0] and da < tol[1]:
            break
        hw = max(8 * tol[0], min(hw, 4 * dw))
        ha = max(8 * tol[1], min(ha, 4 * da))
    return float(w), float(a), float(val)


# --------------------------------------------------------------------------
# scans


SQG_VARIANTS = ("undisturbed", "parallel-q2", "drive-center", "excited-center")


@dataclass
class SQGPoint:
    omega_q1: float
    variant: str
    frequency: float
    amplitude: float
    infidelity: float


def sqg_scan_point(
    model: SystemModel,
    omega_q1: float,
    variant: str = "undisturbed",
    theta: float = math.pi,
    duration: float = 20.0,
    width: float = 4.0,
    config: MagnusConfig = DRIVEN,
    **search,
) -> SQGPoint:
    """Optimized q1 gate infidelity with q1 idling at ``omega_q1``.

    Variants add a simultaneous gate of the same angle on q2 or on the
    centre mode (at its labelled frequency), or start with the centre
    mode excited.  Couplers keep their idle frequencies.
    """
    if variant not in SQG_VARIANTS:
        raise ValueError(f"variant must be one of {SQG_VARIANTS}")
    m = model.with_idle(q1=omega_q1)
    ls = idle_spectrum(m, max_total_excitations=2)
    a0 = amplitude_for_angle(theta, width, duration)
    vac = {}
    simultaneous, initial = [], None
    if variant in ("parallel-q2", "drive-center"):
        other = "q2" if variant == "parallel-q2" else "c"
        w_o = ls.energy({other: 1}) - ls.energy(vac)
        simultaneous.append(ChargeDrive(other, a0, width, w_o, 0.0, duration))
    if variant == "excited-center":
        initial = {"c": 1}
    w, a, val = optimize_single_qubit(
        m, ls, "q1", theta, 0.0, duration, width, simultaneous, initial, config, **search
    )
    return SQGPoint(float(omega_q1), variant, w, a, val)


@dataclass
class SpectatorRow:
    n_qubits: int
    sigma_c: float
    params: CZParams
    infidelity: float
    evaluations: int
    delta: dict
    center_residual: float
    coupler_leakage: float


def spectator_study(
    n_values: Sequence[int] = (2, 3, 4),
    sigma_c_values: Sequence[float] = (3.0,),
    levels: int = 3,
    max_excitations: int | None = 4,
    tau: float = 60.0,
    config: MagnusConfig = MagnusConfig(dt=0.05),
    max_evals: int = 600,
    seeds: Mapping[float, CZParams] | None = None,
    callback: Callable | None = None,
    mode_levels: Mapping[str, int] | None = None,
) -> list[SpectatorRow]:
    """Re-optimize the q1-q2 CZ as spectators q3, q4, ... are added.

    Each ``(N, sigma_c)`` optimization starts from the optimum found at
    ``N - 1`` (or from ``seeds``/the analytic seed for the first ``N``).
    ``mode_levels`` overrides ``levels`` for individual modes.
    """
    from .model import unit_cell_model

    rows = []
    prev: dict[float, CZParams] = dict(seeds or {})
    for n in n_values:
        model = unit_cell_model(n, levels, max_excitations)
        if mode_levels:
            model = model.with_truncation({k: v for k, v in mode_levels.items() if k in model.labels})
        ls = idle_spectrum(model, max_total_excitations=2)
        for sc in sigma_c_values:
            seed = prev.get(sc)
            if seed is None:
                seed = cz_seed(model, tau, 1.0, sc, labeled=ls, config=config)
            else:
                seed = replace_sigma(seed, sc)
            out = optimize_cz(model, ls, seed, "state", config, max_evals=max_evals)
            res = run_cz(model, ls, schedule_cz(out.params), PROBE_STATE, config)
            prev[sc] = out.params
            row = SpectatorRow(
                n,
                sc,
                out.params,
                1.0 - res.fidelity,
                out.evaluations,
                res.leakage["delta"],
                res.leakage["center_residual"],
                res.leakage["coupler_leakage"],
            )
            rows.append(row)
            if callback is not None:
                callback(row)
    return rows


def replace_sigma(p: CZParams, sigma_c: float) -> CZParams:
    return CZParams(p.A_q1, p.A_q2, p.A_c1, p.A_c2, sigma_c, p.sigma_q, p.tau)
