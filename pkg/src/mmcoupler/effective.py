"""Closed-form analytics for the three-mode gate.

Schrieffer-Wolff elimination of the tunable couplers, the one- and
two-excitation manifold Hamiltonians and propagators, the coupling-ratio
resonance condition, the analytic conditional phase, a Jacobi-rotation
propagator for the single-excitation manifold, hybridization crosstalk
matrix elements and the gate-duration comparison.

Basis conventions follow the ``|n_q1 n_q2 n_c>`` ordering: the single
excitation block is ``{|001>, |010>, |100>}`` and the double excitation
block is ``{|200>, |110>, |101>}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .model import SystemModel, coupling_strength

GUARD = 0.3
RATIO = math.sqrt(1.5)


class DispersiveGuardError(ValueError):
    """A perturbative formula was evaluated outside its validity range."""


class ResonanceError(ValueError):
    """The closed-form propagators were requested off resonance."""


@dataclass(frozen=True)
class EffectiveModel:
    """Dressed parameters after eliminating couplers ``c1``, ``c2`` (rad/ns)."""

    omega: dict
    alpha: dict
    g_cq1: float
    g_cq2: float
    g_c1c2: float
    bare: dict
    qubits: tuple = ("q1", "q2")

    def detuning(self, a: str, b: str) -> float:
        return self.bare[a] - self.bare[b]

    def total(self, a: str, b: str) -> float:
        return self.bare[a] + self.bare[b]

    def to_dict(self) -> dict:
        return {
            "omega": dict(self.omega),
            "alpha": dict(self.alpha),
            "g_cq1": self.g_cq1,
            "g_cq2": self.g_cq2,
            "g_c1c2": self.g_c1c2,
        }


def _g(model: SystemModel, freqs, a, b) -> float:
    beta = model.couplings.beta(a, b)
    if beta == 0:
        return 0.0
    return coupling_strength(beta, freqs[a], freqs[b])


def _guard(name, g, delta):
    if g == 0:
        return
    if delta == 0 or abs(g / delta) >= GUARD:
        ratio = math.inf if delta == 0 else abs(g / delta)
        raise DispersiveGuardError(f"dispersive guard violated for {name}: |g/Delta| = {ratio:.3g} >= {GUARD}")


def schrieffer_wolff(
    model: SystemModel, frequencies: Mapping[str, float] | None = None, qubits: tuple[str, str] = ("q1", "q2")
) -> EffectiveModel:
    """Second-order elimination of the couplers of ``qubits``.

    Includes both difference (``Delta``) and sum (``Sigma``) denominators.
    Anharmonicities are left untouched.
    """
    f = model.frequencies() if frequencies is None else dict(frequencies)
    qa, qb = qubits
    couplers = ["c" + q[1:] for q in qubits]
    w = {m: f[m] for m in (qa, qb, "c", *couplers)}
    g_qc = {q: _g(model, f, q, cj) for q, cj in zip(qubits, couplers)}
    g_cc = {cj: _g(model, f, "c", cj) for cj in couplers}
    g_cq = {q: _g(model, f, "c", q) for q in qubits}
    for q, cj in zip(qubits, couplers):
        _guard(f"({q},{cj})", g_qc[q], w[q] - w[cj])
        _guard(f"(c,{cj})", g_cc[cj], w["c"] - w[cj])

    def inv(x):
        return 0.0 if x == 0 else 1.0 / x

    D = lambda a, b: w[a] - w[b]  # noqa: E731
    S = lambda a, b: w[a] + w[b]  # noqa: E731
    omega = {}
    for q, cj in zip(qubits, couplers):
        omega[q] = w[q] + g_qc[q] ** 2 * (inv(D(q, cj)) - inv(S(q, cj)))
    omega["c"] = w["c"] + sum(g_cc[cj] ** 2 * (inv(D("c", cj)) - inv(S("c", cj))) for cj in couplers)
    for q, cj in zip(qubits, couplers):
        omega[cj] = (
            w[cj]
            - g_qc[q] ** 2 * (inv(D(q, cj)) + inv(S(q, cj)))
            - g_cc[cj] ** 2 * (inv(D("c", cj)) + inv(S("c", cj)))
        )
    gt = {}
    for q, cj in zip(qubits, couplers):
        gt[q] = g_cq[q] + 0.5 * g_qc[q] * g_cc[cj] * (
            inv(D(q, cj)) + inv(D("c", cj)) - inv(S(q, cj)) - inv(S("c", cj))
        )
    c1, c2 = couplers
    g_c1c2 = 0.5 * g_cc[c1] * g_cc[c2] * (inv(D("c", c1)) + inv(D("c", c2)) + inv(S("c", c1)) + inv(S("c", c2)))
    alpha = {m: model.modes[m].alpha for m in w}
    return EffectiveModel(omega, alpha, float(gt[qa]), float(gt[qb]), float(g_c1c2), w, tuple(qubits))


@dataclass(frozen=True)
class ManifoldModel:
    """One- and two-excitation blocks of the effective three-mode model."""

    H1: np.ndarray
    H2: np.ndarray
    Omega: float
    omega_q1: float
    omega_q2: float
    omega_c: float
    alpha_q1: float
    g1: float
    g2: float


def manifold_matrices(omega_q1, omega_q2, omega_c, alpha_q1, g1, g2) -> ManifoldModel:
    H1 = np.array(
        [[omega_c, g2, g1], [g2, omega_q2, 0.0], [g1, 0.0, omega_q1]],
        dtype=complex,
    )
    s2 = math.sqrt(2.0)
    H2 = np.array(
        [
            [2 * omega_q1 + alpha_q1, 0.0, s2 * g1],
            [0.0, omega_q1 + omega_q2, g2],
            [s2 * g1, g2, omega_q1 + omega_c],
        ],
        dtype=complex,
    )
    Omega = math.sqrt(2 * g1**2 + g2**2)
    return ManifoldModel(H1, H2, Omega, omega_q1, omega_q2, omega_c, alpha_q1, g1, g2)


def manifold_hamiltonians(eff: EffectiveModel) -> ManifoldModel:
    qa, qb = eff.qubits
    return manifold_matrices(eff.omega[qa], eff.omega[qb], eff.omega["c"], eff.alpha[qa], eff.g_cq1, eff.g_cq2)


def resonant_manifold(omega_c: float, alpha_q1: float, g2: float, g1: float | None = None) -> ManifoldModel:
    """Manifold model placed exactly on both gate resonances."""
    g1 = RATIO * g2 if g1 is None else g1
    return manifold_matrices(omega_c - alpha_q1, omega_c, omega_c, alpha_q1, g1, g2)


def check_resonance(mm: ManifoldModel, tol: float = 1e-6):
    scale = max(mm.Omega, 1e-300)
    d1 = mm.omega_q2 - mm.omega_c
    d2 = mm.omega_q1 + mm.alpha_q1 - mm.omega_q2
    if abs(d1) > tol * scale or abs(d2) > tol * scale:
        raise ResonanceError(
            f"closed-form propagators need w_q2 = w_c and w_q1 + alpha = w_q2 "
            f"(off by {d1:.3g}, {d2:.3g} rad/ns); use jacobi_propagator or numerics"
        )


def analytic_propagators(mm: ManifoldModel, t: float, check: bool = True):
    """Closed-form ``(U1, U2)`` at time ``t`` on both gate resonances.

    ``U1`` keeps only the resonant ``|001>``-``|010>`` exchange; the
    ``|100>`` state only picks up its dynamical phase.
    """
    if check:
        check_resonance(mm)
    g1, g2, Om = mm.g1, mm.g2, mm.Omega
    ph = np.exp(-1j * mm.omega_q2 * t)
    cs, sn = math.cos(g2 * t), math.sin(g2 * t)
    U1 = np.array(
        [
            [ph * cs, -1j * ph * sn, 0],
            [-1j * ph * sn, ph * cs, 0],
            [0, 0, np.exp(-1j * mm.omega_q1 * t)],
        ],
        dtype=complex,
    )
    if Om == 0:
        return U1, np.exp(-1j * (mm.omega_q1 + mm.omega_q2) * t) * np.eye(3, dtype=complex)
    c, s = math.cos(Om * t), math.sin(Om * t)
    s2 = math.sqrt(2.0)
    M = np.array(
        [
            [g2**2 + 2 * g1**2 * c, s2 * g1 * g2 * (c - 1), -1j * Om * s2 * g1 * s],
            [s2 * g1 * g2 * (c - 1), 2 * g1**2 + g2**2 * c, -1j * Om * g2 * s],
            [-1j * Om * s2 * g1 * s, -1j * Om * g2 * s, Om**2 * c],
        ],
        dtype=complex,
    )
    U2 = np.exp(-1j * (mm.omega_q1 + mm.omega_q2) * t) / Om**2 * M
    return U1, U2


def resonance_ratio_check(g1: float, g2: float, tol: float = 1e-9):
    """``(passed, deviation)`` with deviation ``|g1|/|g2| - sqrt(3/2)``."""
    if g2 == 0:
        raise ValueError("g2 must be non-zero")
    dev = abs(g1) / abs(g2) - RATIO
    return abs(dev) <= tol, dev


def sgn(x: float) -> float:
    """Sign with ``sgn(0) = +1``."""
    return 1.0 if x >= 0 else -1.0


def conditional_phase_analytic(g2: float, t: float, init_phases=(0.0, 0.0, 0.0, 0.0)) -> float:
    """Step-function conditional phase of the square-pulse model.

    ``init_phases`` are the initial-state phases ``(v00, v01, v10, v11)``.
    """
    v00, v01, v10, v11 = init_phases
    return 0.5 * math.pi * (1.0 - sgn(math.cos(g2 * t))) - (v11 - v10 - v01 + v00)


@dataclass(frozen=True)
class JacobiModel:
    """Two Jacobi rotations of the single-excitation block.

    Basis ``{|001>, |010>, |100>}`` with ``H = [[wb, g2, g1], [g2, wb, 0],
    [g1, 0, wa]]``.
    """

    omega_a: float
    omega_b: float
    g1: float
    g2: float

    def __post_init__(self):
        if not self.omega_a > self.omega_b:
            raise ValueError("Jacobi model assumes omega_a > omega_b")

    @property
    def lam0(self):
        return self.omega_b - self.g2, self.omega_b + self.g2

    @property
    def lam1(self):
        lp0 = self.lam0[1]
        mean = 0.5 * (self.omega_a + lp0)
        half = 0.5 * math.sqrt((self.omega_a - lp0) ** 2 + 2 * self.g1**2)
        return mean - half, mean + half

    @property
    def weights(self):
        lp0 = self.lam0[1]
        lm1, lp1 = self.lam1
        x = self.g1 / math.sqrt(2.0)
        if x == 0:
            return 1.0, 0.0
        v11 = x / math.sqrt(x * x + (lm1 - lp0) ** 2)
        v12 = x / math.sqrt(x * x + (lp1 - lp0) ** 2)
        return v11, v12

    @property
    def lam_bar(self):
        return 0.5 * (self.lam1[1] + self.lam0[0])

    @property
    def delta(self):
        return self.lam1[1] - self.lam0[0]

    @property
    def varpi(self):
        v11 = self.weights[0]
        return math.sqrt(self.delta**2 + 2 * self.g1**2 * v11**2)

    def _z(self, t):
        h = 0.5 * self.varpi * t
        return math.cos(h) + 1j * (self.delta / self.varpi) * math.sin(h)

    def r(self, t):
        return abs(self._z(t))

    def c(self, t):
        return 2 * self.g1 * self.weights[0] / (math.sqrt(2.0) * self.varpi) * math.sin(0.5 * self.varpi * t)

    def phi(self, t):
        """Continuous branch of ``arctan[(Delta/varpi) tan(varpi t / 2)]``."""
        return float(np.angle(self._z(t)))

    def V(self) -> np.ndarray:
        v11, v12 = self.weights
        s2 = math.sqrt(2.0)
        return np.array([[-1, v11, v12], [1, v11, v12], [0, -s2 * v12, s2 * v11]], dtype=float) / s2

    def UD(self, t) -> np.ndarray:
        lb = self.lam_bar
        z = self._z(t)
        cc = self.c(t)
        e = np.exp(-1j * lb * t)
        return np.array(
            [
                [z * e, 0, 1j * cc * e],
                [0, np.exp(-1j * self.lam1[0] * t), 0],
                [1j * cc * e, 0, np.conj(z) * e],
            ],
            dtype=complex,
        )

    def propagator(self, t) -> np.ndarray:
        V = self.V()
        return V @ self.UD(t) @ V.T


def jacobi_propagator(omega_a: float, omega_b: float, g1: float, g2: float, t: float) -> np.ndarray:
    """Approximate single-excitation propagator ``V U_D(t) V^T``."""
    return JacobiModel(omega_a, omega_b, g1, g2).propagator(t)


def jacobi_listed_elements(jm: JacobiModel, t: float) -> dict:
    """Closed-form matrix elements written out from the rotation construction."""
    v11, v12 = jm.weights
    lb = jm.lam_bar
    r, ph, c = jm.r(t), jm.phi(t), jm.c(t)
    Rp = r * np.exp(-1j * (lb * t - ph))
    Rm = r * np.exp(-1j * (lb * t + ph))
    C = c * np.exp(-1j * lb * t)
    E = np.exp(-1j * jm.lam1[0] * t)
    s2 = math.sqrt(2.0)
    return {
        ("001", "001"): 0.5 * v11**2 * E + 0.5 * v12**2 * Rm - 1j * v12 * C + 0.5 * Rp,
        ("001", "010"): 0.5 * v11**2 * E + 0.5 * v12**2 * Rm - 0.5 * Rp,
        ("001", "100"): (v11 * v12 * Rm - v11 * v12 * E - 1j * v11 * C) / s2,
        ("010", "010"): 0.5 * v11**2 * E + 0.5 * v12**2 * Rm + 1j * v12 * C + 0.5 * Rp,
        ("010", "100"): (v11 * v12 * Rm - v11 * v12 * E + 1j * v11 * C) / s2,
        ("100", "100"): v11**2 * Rm + v12**2 * E,
    }


def crosstalk_matrix_elements(
    model: SystemModel,
    frequencies: Mapping[str, float] | None = None,
    target: str = "q1",
    spectator: str = "q2",
) -> dict:
    """Leading-order drive matrix elements of the target charge operator.

    Keys are ``(final, initial)`` strings in ``|n_target n_spectator n_c>``
    order.  Evaluated with the rotating-wave couplings.
    """
    f = model.frequencies() if frequencies is None else dict(frequencies)
    ct, cs = "c" + target[1:], "c" + spectator[1:]
    wt, ws, wc = f[target], f[spectator], f["c"]
    at = model.modes[target].alpha
    qzp = model.modes[target].charge_zpf
    g_ct, g_cs = _g(model, f, "c", target), _g(model, f, "c", spectator)
    g_tct, g_cct = _g(model, f, target, ct), _g(model, f, "c", ct)
    g_scs, g_ccs = _g(model, f, spectator, cs), _g(model, f, "c", cs)
    _guard(f"({target},{ct})", g_tct, wt - f[ct])
    _guard(f"(c,{ct})", g_cct, wc - f[ct])
    _guard(f"({spectator},{cs})", g_scs, ws - f[cs])
    _guard(f"(c,{cs})", g_ccs, wc - f[cs])
    for name, d in (
        (f"{target}-c", wt - wc),
        (f"{target}-{spectator}", wt - ws),
        (f"{spectator}-c", ws - wc),
        (f"{target}+alpha-c", wt + at - wc),
        (f"{target}+alpha-{spectator}", wt + at - ws),
    ):
        if abs(d) < 1e-9:
            raise DispersiveGuardError(f"crosstalk formula singular at {name} resonance")
    A_c = g_ct + g_tct * g_cct / (wc - f[ct])
    A_t2 = g_ct + g_tct * g_cct / (ws - f[ct])
    A_s = g_cs + g_scs * g_ccs / (ws - f[cs])
    s2 = math.sqrt(2.0)
    return {
        ("001", "000"): -1j * qzp * A_c / (wt - wc),
        ("010", "000"): -1j * qzp / (ws - wc) * A_t2 * A_s / (wt - ws),
        ("101", "100"): 1j * qzp * A_c * (1 / (wt - wc) - 2 / (wt + at - wc)),
        ("110", "100"): 1j * qzp / (ws - wc) * A_t2 * A_s * (1 / (wt - ws) - 2 / (wt + at - ws)),
        ("200", "001"): -1j * s2 * qzp * A_c * (1 / (wt - wc) - 1 / (wt + at - wc)),
        ("200", "010"): -1j * s2 * qzp / (ws - wc) * A_t2 * A_s * (1 / (wt - ws) - 1 / (wt + at - ws)),
    }


def center_drive_amplitude(model: SystemModel, frequencies=None, target: str = "q1") -> float:
    """First-order centre-mode transition amplitude ``g_cq + g_qcj g_ccj / (w_c - w_cj)``."""
    f = model.frequencies() if frequencies is None else dict(frequencies)
    ct = "c" + target[1:]
    return _g(model, f, "c", target) + _g(model, f, target, ct) * _g(model, f, "c", ct) / (f["c"] - f[ct])


def spectator_drive_amplitude(model: SystemModel, frequencies=None, target: str = "q1", spectator: str = "q2") -> float:
    """Second-order spectator amplitude: product of two first-order brackets."""
    f = model.frequencies() if frequencies is None else dict(frequencies)
    ct, cs = "c" + target[1:], "c" + spectator[1:]
    ws = f[spectator]
    A_t = _g(model, f, "c", target) + _g(model, f, target, ct) * _g(model, f, "c", ct) / (ws - f[ct])
    A_s = _g(model, f, "c", spectator) + _g(model, f, spectator, cs) * _g(model, f, "c", cs) / (ws - f[cs])
    return A_t * A_s


def duration_comparison(g1: float) -> dict:
    """Single-step gate time against the sequential transfer-CZ-transfer protocol."""
    if not g1 > 0:
        raise ValueError("g1 must be positive")
    tau_new = RATIO * math.pi / g1
    tau_seq = (math.sqrt(2.0) + 1.0) / math.sqrt(2.0) * math.pi / g1
    return {"tau_new": tau_new, "tau_mcm": tau_seq, "ratio": tau_seq / tau_new}

