"""Localization and occupation diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .calibrate import LabeledSpectrum
from .model import FockSpace, mode_kind
from .propagate import Trajectory


class NormalizationError(ValueError):
    pass


def inverse_participation_ratio(state, space: FockSpace | None = None, atol: float = 1e-8) -> float:
    """``sum_m |<m|psi>|^4`` in the local Fock basis."""
    psi = np.asarray(state)
    if space is not None and psi.size != space.total_dim:
        raise ValueError(f"state has {psi.size} entries, space has {space.total_dim}")
    p = np.abs(psi) ** 2
    norm = p.sum()
    if abs(norm - 1.0) > atol:
        raise NormalizationError(f"state norm^2 {norm:.12f} differs from 1")
    return float(np.sum(p**2))


def mode_occupations(states, space: FockSpace) -> dict[str, np.ndarray]:
    """``<n_l>`` for every mode; ``states`` is one vector or rows of vectors."""
    p = np.abs(np.asarray(states)) ** 2
    return {m: p @ space.states[:, i].astype(float) for i, m in enumerate(space.mode_order)}


@dataclass
class OccupationMap:
    """Per computational state: qubit occupations, aggregated coupler occupation, group."""

    labels: list
    qubits: list
    qubit_occupation: np.ndarray
    coupler_occupation: np.ndarray
    group: np.ndarray
    ipr: np.ndarray
    extra: dict = field(default_factory=dict)

    def rows(self):
        for k, lb in enumerate(self.labels):
            yield lb, int(self.group[k]), self.qubit_occupation[k], float(self.coupler_occupation[k]), float(self.ipr[k])

    def group_mean_ipr(self) -> dict[int, float]:
        return {int(g): float(self.ipr[self.group == g].mean()) for g in np.unique(self.group)}


def occupation_map(labeled: LabeledSpectrum, qubits: Sequence[str] | None = None) -> OccupationMap:
    """Occupations and IPR of all ``2^N`` computational states.

    Couplers and the centre mode are summed into one coupler occupation.
    """
    space = labeled.space
    qubits = list(qubits) if qubits is not None else [m for m in space.mode_order if mode_kind(m) == "qubit"]
    labels = labeled.computational_labels(qubits)
    missing = [lb for lb in labels if lb not in labeled]
    if missing:
        raise KeyError(f"computational labels not assigned: {missing[:3]}")
    vecs = labeled.basis(labels).T
    occ = mode_occupations(vecs, space)
    q = np.stack([occ[m] for m in qubits], axis=1)
    others = [m for m in space.mode_order if m not in qubits]
    cpl = sum((occ[m] for m in others), np.zeros(len(labels)))
    total = q.sum(axis=1) + cpl
    ipr = np.array([inverse_participation_ratio(v) for v in vecs])
    return OccupationMap(labels, qubits, q, cpl, np.rint(total).astype(int), ipr, {"total": total})


def hybridization(labeled: LabeledSpectrum, qubits: Sequence[str] | None = None) -> dict[str, float]:
    """Worst-case occupation leaked out of the nominal label.

    ``qubit`` is the largest occupation of a qubit that is nominally empty
    in a computational state; ``coupler`` the largest aggregated coupler
    occupation of a computational state.
    """
    om = occupation_map(labeled, qubits)
    q_err = 0.0
    for k, lb in enumerate(om.labels):
        for i, m in enumerate(om.qubits):
            if lb[labeled.space.position(m)] == 0:
                q_err = max(q_err, float(om.qubit_occupation[k, i]))
    return {"qubit": q_err, "coupler": float(om.coupler_occupation.max())}


def leakage_report(traj: Trajectory, labeled: LabeledSpectrum) -> dict:
    """Occupation changes and leaked population between first and last snapshot.

    ``delta`` holds ``|<n_l>_end - <n_l>_start|`` of the local number
    operators and ``center_residual`` is its centre-mode entry.
    ``center_leakage`` and ``coupler_leakage`` are end-minus-start
    populations of labelled eigenstates with the centre mode, respectively
    any coupler, excited; static hybridization does not enter them.
    """
    space = labeled.space
    states = np.asarray(traj.states)
    if states.ndim != 2 or states.shape[0] < 2:
        raise ValueError("trajectory needs first and last snapshots of one state")
    ends = states[[0, -1]]
    occ = mode_occupations(ends, space)
    delta = {m: float(abs(v[1] - v[0])) for m, v in occ.items()}
    pops = np.abs(ends @ labeled.eigenvectors.conj()) ** 2
    couplers = [space.position(m) for m in space.mode_order if mode_kind(m) == "coupler"]
    centre = space.position("c") if "c" in space.mode_order else None
    c_cols = [j for k, j in labeled.label_map.items() if centre is not None and k[centre] > 0]
    k_cols = [j for k, j in labeled.label_map.items() if any(k[p] > 0 for p in couplers)]
    gain = lambda cols: float(pops[1, cols].sum() - pops[0, cols].sum()) if cols else 0.0  # noqa: E731
    return {
        "delta": delta,
        "center_residual": delta.get("c", 0.0),
        "center_leakage": gain(c_cols),
        "coupler_leakage": gain(k_cols),
    }
