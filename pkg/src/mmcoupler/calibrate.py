"""Idle-point spectrum: eigensolve, label by local overlap, ZZ couplings.

Eigenstates are labelled by solving the assignment problem on the matrix of
squared overlaps between eigenvectors and local number states, so the
labelling does not depend on the order in which states are visited.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg as la
import scipy.optimize as opt
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import FockSpace, SparseOperator, SystemModel, assemble_hamiltonian

log = logging.getLogger(__name__)

DENSE_LIMIT = 4096


class EigensolveError(RuntimeError):
    pass


class LabelingError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    def __init__(self, message, scan=None):
        super().__init__(message)
        self.scan = scan


class HybridizationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray


def _as_matrix(H):
    if isinstance(H, SparseOperator):
        return H.matrix
    return H


def eigensolve(H, k: int | None = None, which: str = "lowest") -> Spectrum:
    """Lowest ``k`` eigenpairs of a hermitian operator (all if ``k`` is None).

    Dense LAPACK below :data:`DENSE_LIMIT` states, shift-invert Lanczos above.
    Every pair is checked to satisfy ``|Hv - lv| <= 1e-9 |H|``.
    """
    if which != "lowest":
        raise ValueError("only the lowest part of the spectrum is supported")
    M = _as_matrix(H)
    n = M.shape[0]
    k = n if k is None else int(k)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if sp.issparse(M):
        norm = float(abs(M).sum(axis=0).max())
    else:
        norm = float(np.abs(M).sum(axis=0).max())
    if n <= DENSE_LIMIT or k > n // 2:
        A = M.toarray() if sp.issparse(M) else np.asarray(M)
        w, v = la.eigh(A, subset_by_index=(0, k - 1))
    else:
        diag = M.diagonal().real
        sigma = diag.min() - 0.05 * norm
        try:
            w, v = spla.eigsh(M.tocsc(), k=k, sigma=sigma, which="LM", tol=1e-13, maxiter=20 * n)
        except spla.ArpackNoConvergence as exc:
            raise EigensolveError(f"eigsh did not converge for k={k}: {exc}") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    res = np.linalg.norm(M @ v - v * w, axis=0)
    if np.any(res > 1e-9 * max(norm, 1.0)):
        raise EigensolveError(f"eigenpair residual {res.max():.3e} exceeds 1e-9*|H| (|H|~{norm:.3e})")
    return Spectrum(np.asarray(w), np.asarray(v), res)


@dataclass
class LabeledSpectrum:
    """Eigenpairs with the local-state labels assigned to them."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    space: FockSpace
    label_map: dict[tuple[int, ...], int]
    overlaps: dict[tuple[int, ...], float]
    warnings: list[str] = field(default_factory=list)

    @property
    def modes(self) -> tuple[str, ...]:
        return self.space.mode_order

    def key(self, label) -> tuple[int, ...]:
        """Normalise ``label`` given as tuple or ``{mode: n}`` mapping."""
        if isinstance(label, Mapping):
            occ = [0] * len(self.modes)
            for m, n in label.items():
                occ[self.space.position(m)] = int(n)
            return tuple(occ)
        return tuple(int(n) for n in label)

    def __contains__(self, label) -> bool:
        return self.key(label) in self.label_map

    def index(self, label) -> int:
        key = self.key(label)
        try:
            return self.label_map[key]
        except KeyError:
            raise KeyError(f"label {key} not assigned") from None

    def energy(self, label) -> float:
        return float(self.eigenvalues[self.index(label)])

    def vector(self, label) -> np.ndarray:
        return self.eigenvectors[:, self.index(label)]

    def basis(self, labels: Sequence) -> np.ndarray:
        """Columns of the labelled eigenvectors, in the given order."""
        return self.eigenvectors[:, [self.index(lb) for lb in labels]]

    def labels(self) -> list[tuple[int, ...]]:
        return list(self.label_map)

    def computational_labels(self, qubits: Sequence[str]) -> list[tuple[int, ...]]:
        """Labels with the listed qubits in {0,1} and all other modes empty.

        Ordered with the first listed qubit most significant.
        """
        out = []
        for bits in range(2 ** len(qubits)):
            occ = {q: (bits >> (len(qubits) - 1 - i)) & 1 for i, q in enumerate(qubits)}
            out.append(self.key(occ))
        return out


def label_eigenstates(spectrum: Spectrum, space: FockSpace, max_total_excitations: int) -> LabeledSpectrum:
    """Assign local labels with at most ``max_total_excitations`` quanta to eigenvectors.

    The assignment maximises the summed squared overlap.  Each labelled
    eigenvector is rephased so that its amplitude on its own local state
    is real and positive.
    """
    vecs = spectrum.eigenvectors
    rows = np.nonzero(space.excitations() <= max_total_excitations)[0]
    if len(rows) > vecs.shape[1]:
        raise LabelingError(
            f"{len(rows)} labels requested but only {vecs.shape[1]} eigenvectors available"
        )
    ov = np.abs(vecs[rows, :]) ** 2
    r, c = opt.linear_sum_assignment(ov, maximize=True)
    vecs = vecs.copy()
    label_map, overlaps, notes = {}, {}, []
    for i, j in zip(r, c):
        key = space.occupation(rows[i])
        amp = vecs[rows[i], j]
        if abs(amp) > 0:
            vecs[:, j] *= abs(amp) / amp
        label_map[key] = int(j)
        overlaps[key] = float(ov[i, j])
        if ov[i, j] < 0.5:
            msg = f"label {key}: overlap^2 {ov[i, j]:.3f} < 0.5 (strong hybridization)"
            notes.append(msg)
    if notes:
        warnings.warn(f"{len(notes)} strongly hybridized labels, e.g. {notes[0]}", HybridizationWarning, stacklevel=2)
    return LabeledSpectrum(np.asarray(spectrum.eigenvalues), vecs, space, label_map, overlaps, notes)


def idle_spectrum(
    model: SystemModel,
    frequencies: Mapping[str, float] | None = None,
    max_total_excitations: int = 2,
    k: int | None = None,
    rwa: bool = False,
) -> LabeledSpectrum:
    """Diagonalise and label the (idle) Hamiltonian of ``model``."""
    H = assemble_hamiltonian(model, frequencies, rwa=rwa)
    n = H.dim
    if k is None:
        n_labels = int(np.sum(model.space.excitations() <= max_total_excitations))
        k = n if n <= DENSE_LIMIT else min(n, max(2 * n_labels, n_labels + 20))
    spec = eigensolve(H, k)
    return label_eigenstates(spec, model.space, max_total_excitations)


@dataclass(frozen=True)
class ZZReport:
    pair: tuple[str, str]
    zeta: float

    @property
    def khz(self) -> float:
        return self.zeta / (2 * np.pi) * 1e6


def zz_coupling(ls: LabeledSpectrum, a: str, b: str) -> ZZReport:
    """(E11 - E01) - (E10 - E00) for modes ``a`` and ``b``, others empty."""
    e = {}
    for na in (0, 1):
        for nb in (0, 1):
            label = {a: na, b: nb}
            if label not in ls:
                raise KeyError(f"ZZ({a},{b}) needs label {ls.key(label)}")
            e[na, nb] = ls.energy(label)
    zeta = (e[1, 1] - e[0, 1]) - (e[1, 0] - e[0, 0])
    return ZZReport((a, b), float(zeta))


def zz_pairs(model: SystemModel) -> list[tuple[str, str]]:
    """Centre-qubit pairs followed by qubit-qubit pairs."""
    qs = model.qubits
    pairs = [("c", q) for q in qs]
    pairs += [(qs[i], qs[j]) for i in range(len(qs)) for j in range(i + 1, len(qs))]
    return pairs


def zz_report(model: SystemModel, frequencies: Mapping[str, float] | None = None) -> list[ZZReport]:
    ls = idle_spectrum(model, frequencies)
    return [zz_coupling(ls, a, b) for a, b in zz_pairs(model)]


def reduced_zz(
    model: SystemModel,
    qubit: str,
    coupler_omega: float,
    frequencies: Mapping[str, float] | None = None,
    all_couplers: bool = False,
) -> float:
    """ZZ(c, qubit) of the (qubit, centre, coupler) sub-model.

    With ``all_couplers`` every coupler is kept so that their dressing of
    the centre mode is included; ``frequencies`` then fixes the others.
    """
    cj = "c" + qubit[1:]
    keep = [qubit, "c"] + (model.couplers if all_couplers else [cj])
    sub = model.subsystem(keep)
    base = {m: w for m, w in (frequencies or {}).items() if m in sub.labels}
    ls = idle_spectrum(sub, sub.frequencies(**{**base, cj: coupler_omega}))
    return zz_coupling(ls, "c", qubit).zeta


@dataclass
class IdleResult:
    frequencies: dict[str, float]
    scans: dict[str, tuple[np.ndarray, np.ndarray]]
    reduced_zeta: dict[str, float]
    report: list[ZZReport]

    def max_abs_khz(self) -> float:
        return max(abs(r.khz) for r in self.report)


KHZ = 2 * np.pi * 1e-6  # 1 kHz in rad/ns


def find_coupler_idle(
    model: SystemModel,
    qubit: str,
    window: tuple[float, float],
    n_scan: int = 41,
    prefer: float | None = None,
    tol: float = KHZ,
):
    """Root of ZZ(c, qubit) in the coupler-frequency ``window`` (rad/ns)."""
    lo, hi = window
    if not lo < hi:
        raise ValueError("empty coupler window")
    grid = np.linspace(lo, hi, n_scan)
    zeta = np.array([reduced_zz(model, qubit, w) for w in grid])
    scan = (grid, zeta)
    if np.all(np.abs(zeta) < tol):
        return float(grid[n_scan // 2]), float(zeta[n_scan // 2]), scan
    flips = np.nonzero(np.sign(zeta[:-1]) * np.sign(zeta[1:]) <= 0)[0]
    # reject brackets that straddle a pole rather than a root
    flips = [i for i in flips if abs(zeta[i]) + abs(zeta[i + 1]) < 10 * np.median(np.abs(zeta)) + 1e-12]
    if not flips:
        raise CalibrationError(f"no ZZ(c,{qubit}) sign change in window [{lo:.4f}, {hi:.4f}] rad/ns", scan)
    target = prefer if prefer is not None else 0.5 * (lo + hi)
    i = min(flips, key=lambda i: abs(0.5 * (grid[i] + grid[i + 1]) - target))
    f = lambda w: reduced_zz(model, qubit, w)
    if zeta[i] == 0:
        return float(grid[i]), 0.0, scan
    root = opt.brentq(f, grid[i], grid[i + 1], xtol=1e-10, rtol=1e-14)
    z = f(root)
    if abs(z) > tol:
        raise CalibrationError(f"ZZ(c,{qubit}) root only reached |zeta|={abs(z):.3e} rad/ns", scan)
    return float(root), float(z), scan


def _bracket_root(f, x0: float, lo: float, hi: float, step: float):
    """Expand a bracket around ``x0`` until ``f`` changes sign, then solve."""
    f0 = f(x0)
    if f0 == 0:
        return x0
    while step < hi - lo:
        a, b = max(lo, x0 - step), min(hi, x0 + step)
        fa, fb = f(a), f(b)
        for u, fu, v, fv in ((a, fa, x0, f0), (x0, f0, b, fb)):
            if fu * fv <= 0:
                return opt.brentq(f, u, v, xtol=1e-10, rtol=1e-14)
        step *= 2
    raise CalibrationError(f"refinement lost the ZZ root near {x0:.5f} rad/ns")


def find_idle_configuration(
    model: SystemModel,
    coupler_window: Mapping[str, tuple[float, float]] | tuple[float, float],
    n_scan: int = 41,
    refine: int = 4,
) -> IdleResult:
    """Per-qubit ZZ(c, q_j) = 0 search, then a full-model check.

    The coarse search uses (q_j, c, c_j) sub-models.  Up to ``refine``
    Gauss-Seidel sweeps then re-solve each root with all couplers present,
    because each coupler shifts the centre mode seen by the other qubits.
    """
    freqs = {}
    scans, reduced = {}, {}
    windows = {}
    for q in model.qubits:
        cj = "c" + q[1:]
        win = coupler_window[cj] if isinstance(coupler_window, Mapping) else coupler_window
        windows[cj] = win
        w, z, scan = find_coupler_idle(model, q, win, n_scan=n_scan, prefer=model.idle[cj])
        freqs[cj] = w
        scans[cj] = scan
        reduced[cj] = z
        log.info("idle %s: %.6f GHz (reduced zeta %.3g kHz)", cj, w / (2 * np.pi), z / KHZ)
    for sweep in range(refine if len(model.couplers) > 1 else 0):
        moved = 0.0
        for q in model.qubits:
            cj = "c" + q[1:]
            ctx = model.frequencies(**freqs)
            f = lambda w, q=q, ctx=ctx: reduced_zz(model, q, w, ctx, all_couplers=True)
            w = _bracket_root(f, freqs[cj], *windows[cj], step=2 * np.pi * 2e-3)
            moved = max(moved, abs(w - freqs[cj]))
            freqs[cj] = w
            reduced[cj] = f(w)
        log.info("refinement sweep %d: largest coupler shift %.3g MHz", sweep + 1, moved / (2 * np.pi) * 1e3)
        if moved < 2 * np.pi * 1e-6:
            break
    full = model.frequencies(**freqs)
    report = zz_report(model, full)
    return IdleResult(freqs, scans, reduced, report)


def zz_landscape(model: SystemModel, grid_a: np.ndarray, grid_b: np.ndarray, couplers=("c1", "c2"), pairs=None):
    """ZZ of the requested pairs over a 2D grid of two mode frequencies.

    Returns ``{pair: array(len(grid_a), len(grid_b))}``.
    """
    pairs = pairs or zz_pairs(model)
    out = {p: np.zeros((len(grid_a), len(grid_b))) for p in pairs}
    for i, wa in enumerate(grid_a):
        for j, wb in enumerate(grid_b):
            ls = idle_spectrum(model, model.frequencies(**{couplers[0]: wa, couplers[1]: wb}))
            for p in pairs:
                out[p][i, j] = zz_coupling(ls, *p).zeta
    return out

