"""Flux and charge-drive pulse envelopes and gate schedules."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import erf

SQRT2 = np.sqrt(2.0)


def default_buffer(sigma: float) -> float:
    return 2.0 * SQRT2 * sigma


@dataclass(frozen=True)
class FlatTopPulse:
    """Gaussian-filtered square frequency offset.

    ``amplitude`` in rad/ns, times in ns.  The pulse occupies
    ``[start, start + tau]`` with ``tau = tau_c + 2 tau_b``.
    """

    amplitude: float
    sigma: float
    tau_c: float
    tau_b: float | None = None
    start: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.tau_c < 0:
            raise ValueError("tau_c must be non-negative")
        if self.tau_b is None:
            object.__setattr__(self, "tau_b", default_buffer(self.sigma))
        if self.tau_b < 0:
            raise ValueError("tau_b must be non-negative")

    @property
    def tau(self) -> float:
        return self.tau_c + 2.0 * self.tau_b

    @property
    def end(self) -> float:
        return self.start + self.tau

    def __call__(self, t):
        return flat_top_value(self, t)


def flat_top_value(p: FlatTopPulse, t):
    """(A/2)[erf((t - tau_b)/(sqrt2 sigma)) - erf((t - tau_c - tau_b)/(sqrt2 sigma))]."""
    s = np.asarray(t, dtype=float) - p.start
    w = SQRT2 * p.sigma
    v = 0.5 * p.amplitude * (erf((s - p.tau_b) / w) - erf((s - p.tau_c - p.tau_b) / w))
    return float(v) if v.ndim == 0 else v


@dataclass(frozen=True)
class ChargeDrive:
    """Gaussian microwave drive ``i A(t) cos(w_d t + phi) (a^+ - a)`` on one mode."""

    mode: str
    amplitude: float
    width: float
    frequency: float
    phase: float = 0.0
    duration: float = 20.0
    start: float = 0.0

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError("envelope width must be positive")
        if not self.duration > 0:
            raise ValueError("drive duration must be positive")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def envelope(self, t):
        s = np.asarray(t, dtype=float) - self.start
        env = self.amplitude * np.exp(-((s - 0.5 * self.duration) ** 2) / (2.0 * self.width**2))
        env = np.where((s >= 0) & (s <= self.duration), env, 0.0)
        return float(env) if env.ndim == 0 else env

    def __call__(self, t):
        """Coefficient of ``i (a^+ - a)`` at time ``t``."""
        t = np.asarray(t, dtype=float)
        v = self.envelope(t) * np.cos(self.frequency * t + self.phase)
        return float(v) if np.ndim(v) == 0 else v


def rotation_angle(d: ChargeDrive) -> float:
    """Weak-drive rotation angle: width * A * sqrt(2 pi) * erf(tau / (2 sqrt2 width))."""
    return d.width * d.amplitude * np.sqrt(2.0 * np.pi) * float(erf(d.duration / (2.0 * SQRT2 * d.width)))


def amplitude_for_angle(theta: float, width: float, duration: float) -> float:
    return theta / (width * np.sqrt(2.0 * np.pi) * float(erf(duration / (2.0 * SQRT2 * width))))


@dataclass
class PulseSchedule:
    """Flux pulses and charge drives over ``[0, duration]``."""

    duration: float
    flux: dict[str, list[FlatTopPulse]] = field(default_factory=dict)
    drives: list[ChargeDrive] = field(default_factory=list)

    def __post_init__(self):
        eps = 1e-9
        for mode, pulses in self.flux.items():
            for p in pulses:
                if p.start < -eps or p.end > self.duration + eps:
                    raise ValueError(
                        f"flux pulse on {mode} spans [{p.start:.4g}, {p.end:.4g}] "
                        f"outside [0, {self.duration:.4g}]"
                    )
        for d in self.drives:
            if d.start < -eps or d.end > self.duration + eps:
                raise ValueError(f"drive on {d.mode} exceeds schedule duration")

    @property
    def driven_modes(self) -> list[str]:
        out = []
        for d in self.drives:
            if d.mode not in out:
                out.append(d.mode)
        return out

    def offset(self, mode: str, t):
        total = np.zeros_like(np.asarray(t, dtype=float))
        for p in self.flux.get(mode, ()):
            total = total + flat_top_value(p, t)
        return float(total) if np.ndim(total) == 0 else total

    def frequencies(self, idle: Mapping[str, float], t) -> dict[str, np.ndarray]:
        """Per-mode angular frequency ``idle + offset(t)``."""
        return {m: w + self.offset(m, t) for m, w in idle.items()}

    def drive_values(self, t) -> list:
        """Summed drive coefficient for each mode in :attr:`driven_modes`."""
        out = []
        for m in self.driven_modes:
            val = 0.0
            for d in self.drives:
                if d.mode == m:
                    val = val + d(t)
            out.append(val)
        return out

    def check_time(self, t: float):
        if t < -1e-12 or t > self.duration + 1e-12:
            raise ValueError(f"t={t} outside schedule [0, {self.duration}]")

    def to_dict(self) -> dict:
        return {
            "duration": self.duration,
            "flux": {
                m: [
                    {"amplitude": p.amplitude, "sigma": p.sigma, "tau_c": p.tau_c, "tau_b": p.tau_b, "start": p.start}
                    for p in ps
                ]
                for m, ps in self.flux.items()
            },
            "drives": [
                {
                    "mode": d.mode,
                    "amplitude": d.amplitude,
                    "width": d.width,
                    "frequency": d.frequency,
                    "phase": d.phase,
                    "duration": d.duration,
                    "start": d.start,
                }
                for d in self.drives
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PulseSchedule":
        flux = {m: [FlatTopPulse(**p) for p in ps] for m, ps in data.get("flux", {}).items()}
        drives = [ChargeDrive(**d) for d in data.get("drives", [])]
        return cls(float(data["duration"]), flux, drives)


@dataclass(frozen=True)
class CZParams:
    """Free and fixed parameters of the single-step CZ schedule.

    Amplitudes in rad/ns; ``sigma_q``, ``sigma_c`` and ``tau`` in ns.
    """

    A_q1: float
    A_q2: float
    A_c1: float
    A_c2: float
    sigma_c: float
    sigma_q: float = 1.0
    tau: float = 60.0

    FREE = ("A_q1", "A_q2", "A_c1", "A_c2", "sigma_c")

    def free_vector(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in self.FREE])

    def with_free(self, x: Sequence[float]) -> "CZParams":
        vals = dict(zip(self.FREE, map(float, x)))
        return CZParams(sigma_q=self.sigma_q, tau=self.tau, **vals)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.FREE + ("sigma_q", "tau")}


def schedule_cz(params: CZParams, pair: tuple[str, str] = ("q1", "q2"), couplers: tuple[str, str] | None = None) -> PulseSchedule:
    """Qubit pulses span ``[0, tau]``; coupler pulses are inset by one qubit buffer.

    ``pair[1]`` is the qubit brought into resonance with the centre mode.
    """
    qa, qb = pair
    ca, cb = couplers if couplers is not None else ("c" + qa[1:], "c" + qb[1:])
    tb_q = default_buffer(params.sigma_q)
    tb_c = default_buffer(params.sigma_c)
    tau_c_q = params.tau - 2 * tb_q
    if tau_c_q < 0:
        raise ValueError(f"tau={params.tau} shorter than the two qubit buffers 2*{tb_q:.4g}")
    tau_c_c = params.tau - 2 * tb_q - 2 * tb_c
    if tau_c_c < 0:
        raise ValueError(
            f"tau={params.tau} cannot hold qubit buffers 2*{tb_q:.4g} plus coupler buffers 2*{tb_c:.4g}"
        )
    flux = {
        qa: [FlatTopPulse(params.A_q1, params.sigma_q, tau_c_q, tb_q, 0.0)],
        qb: [FlatTopPulse(params.A_q2, params.sigma_q, tau_c_q, tb_q, 0.0)],
        ca: [FlatTopPulse(params.A_c1, params.sigma_c, tau_c_c, tb_c, tb_q)],
        cb: [FlatTopPulse(params.A_c2, params.sigma_c, tau_c_c, tb_c, tb_q)],
    }
    return PulseSchedule(params.tau, flux)
