"""Fourth-order Magnus integrator with Krylov exponentials.

Two generator kinds are supported:

* Hamiltonian samplers return ``H(t)`` (rad/ns); the generator is ``-i H``
  and each step is ``exp(-i A)`` with the hermitian Magnus matrix
  ``A = dt Hb + i dt^2 [Hb, H1]``, applied with Lanczos.
* Liouvillian samplers return a general superoperator ``L(t)``; steps use
  ``exp(dt B0 - dt^2 [B0, B1])`` applied with Arnoldi.

Density operators are vectorized column-stacking throughout:
``vec(A rho B) = (B^T kron A) vec(rho)``, i.e. ``rho.reshape(-1, order="F")``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numba
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .model import OperatorStack, SparseOperator, SystemModel, coupling_strength

GL_OFFSET = 1.0 / (2.0 * math.sqrt(3.0))
B1_WEIGHT = math.sqrt(3.0) / 12.0


class KrylovError(RuntimeError):
    """Krylov residual did not reach tolerance within the subspace cap."""


@dataclass(frozen=True)
class MagnusConfig:
    """Step size (ns) and Krylov settings."""

    dt: float = 0.02
    krylov_dim: int = 30
    krylov_tol: float = 1e-10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.krylov_dim < 2:
            raise ValueError("krylov_dim must be at least 2")
        if not self.krylov_tol > 0:
            raise ValueError("krylov_tol must be positive")


DRIVEN = MagnusConfig(dt=0.002)


class GeneratorSampler:
    """Time-dependent generator.

    Parameters
    ----------
    func : callable
        ``t -> SparseOperator | sparse matrix``.  For ``hamiltonian=True`` it
        returns ``H(t)`` and the generator is ``-i H(t)``; otherwise it
        returns the generator itself (e.g. a Liouvillian).
    dim : int
    hamiltonian : bool
        Selects the Lanczos path.
    """

    def __init__(self, func: Callable, dim: int, hamiltonian: bool = True):
        self.func = func
        self.dim = int(dim)
        self.hamiltonian = bool(hamiltonian)

    def __call__(self, t: float) -> sp.csr_matrix:
        out = self.func(t)
        mat = out.matrix if isinstance(out, SparseOperator) else out
        if mat.shape != (self.dim, self.dim):
            raise ValueError(f"generator at t={t} has shape {mat.shape}, expected {self.dim}")
        return sp.csr_matrix(mat)


class StructuredSampler(GeneratorSampler):
    """Hamiltonian ``sum_k c_k(t) O_k`` on a fixed sparse pattern.

    ``coefficients(times)`` gives a ``(len(times), K)`` array; the numba
    batch kernel consumes it directly.
    """

    def __init__(self, stack: OperatorStack, coeff_func: Callable):
        self.stack = stack
        self.coeff_func = coeff_func
        super().__init__(self._at, stack.indptr.size - 1, hamiltonian=True)

    def coefficients(self, times) -> np.ndarray:
        c = np.asarray(self.coeff_func(np.atleast_1d(np.asarray(times, dtype=float))), dtype=float)
        return c.reshape(-1, self.stack.data.shape[0])

    def _at(self, t):
        return self.stack.assemble(self.coefficients([t])[0])


def schedule_coefficients(model: SystemModel, schedule, times, rwa: bool = False) -> np.ndarray:
    """Vectorized coefficient rows matching ``model.structure(rwa, drives)``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    idle = model.frequencies()
    freqs = schedule.frequencies(idle, times)
    cols = [np.ones_like(times)]
    cols += [np.broadcast_to(freqs[m], times.shape) for m in model.labels]
    cols += [coupling_strength(beta, freqs[a], freqs[b]) * np.ones_like(times) for a, b, beta in model.edges()]
    cols += [np.broadcast_to(v, times.shape) for v in schedule.drive_values(times)]
    return np.stack(cols, axis=1)


def schedule_sampler(model: SystemModel, schedule, rwa: bool = False) -> StructuredSampler:
    stack = model.structure(rwa=rwa, drives=schedule.driven_modes)
    return StructuredSampler(stack, lambda ts: schedule_coefficients(model, schedule, ts, rwa))


def static_sampler(H) -> GeneratorSampler:
    mat = sp.csr_matrix(H.matrix if isinstance(H, SparseOperator) else H)
    return GeneratorSampler(lambda t: mat, mat.shape[0], hamiltonian=True)


@dataclass
class Trajectory:
    """Snapshots at the requested grid.

    ``states`` has shape ``(len(times), dim)`` for a single initial vector
    and ``(len(times), n_vec, dim)`` for a batch.
    """

    times: np.ndarray
    states: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


# --------------------------------------------------------------------------
# Magnus generator


def magnus_generator(sampler: GeneratorSampler, t: float, dt: float) -> Callable:
    """Matrix action of the Magnus exponent on ``[t, t + dt]``.

    Returns ``u -> U u`` with ``U = dt B0 - dt^2 [B0, B1]``; the commutator
    is applied as four sparse products, never formed.
    """
    mid = t + 0.5 * dt
    M1 = sampler(mid - GL_OFFSET * dt)
    M2 = sampler(mid + GL_OFFSET * dt)
    if sampler.hamiltonian:
        M1, M2 = -1j * M1, -1j * M2
    B0 = 0.5 * (M1 + M2)
    B1 = B1_WEIGHT * (M2 - M1)

    def action(u):
        return dt * (B0 @ u) - dt * dt * (B0 @ (B1 @ u) - B1 @ (B0 @ u))

    return action


# --------------------------------------------------------------------------
# Krylov exponential


def _expm_hermitian_tridiag(alpha, beta):
    """``exp(-i T) e1`` for real symmetric tridiagonal ``T``."""
    if len(alpha) == 1:
        return np.array([np.exp(-1j * alpha[0])])
    w, Z = sla.eigh_tridiagonal(alpha, beta)
    return Z @ (np.exp(-1j * w) * Z[0].conj())


def krylov_expm_apply(action: Callable, v, m: int = 30, tol: float = 1e-10, hermitian: bool = False):
    """Approximate ``exp(U) v`` in an ``m``-dimensional Krylov subspace.

    Parameters
    ----------
    action : callable
        ``u -> U u``.
    hermitian : bool
        Declares ``U = -i A`` with ``A`` hermitian, enabling Lanczos
        (with full reorthogonalization).  Otherwise Arnoldi with modified
        Gram-Schmidt is used.

    Returns
    -------
    (vector, residual_estimate)
    """
    v = np.asarray(v, dtype=complex)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("krylov_expm_apply needs a non-zero vector")
    n = v.size
    m = min(m, n)
    Q = np.zeros((m + 1, n), dtype=complex)
    Q[0] = v / nrm
    if hermitian:
        alpha = np.zeros(m)
        beta = np.zeros(m)
        for j in range(m):
            w = 1j * action(Q[j])
            alpha[j] = np.vdot(Q[j], w).real
            w = w - alpha[j] * Q[j]
            if j > 0:
                w = w - beta[j - 1] * Q[j - 1]
            w = w - Q[: j + 1].T @ (Q[: j + 1].conj() @ w)
            b = np.linalg.norm(w)
            small = _expm_hermitian_tridiag(alpha[: j + 1], beta[:j])
            if b < tol:
                return nrm * (Q[: j + 1].T @ small), 0.0
            err = b * abs(small[-1]) * nrm
            if err < tol or j == m - 1 or j + 1 == n:
                if err >= tol and j + 1 < n:
                    raise KrylovError(f"Lanczos residual {err:.2e} > {tol:.1e} at m={m}; reduce dt")
                return nrm * (Q[: j + 1].T @ small), err
            beta[j] = b
            Q[j + 1] = w / b
    else:
        Hm = np.zeros((m + 1, m), dtype=complex)
        for j in range(m):
            w = action(Q[j])
            for i in range(j + 1):
                Hm[i, j] = np.vdot(Q[i], w)
                w = w - Hm[i, j] * Q[i]
            b = np.linalg.norm(w)
            E = sla.expm(Hm[: j + 1, : j + 1])
            small = E[:, 0]
            if b < tol:
                return nrm * (Q[: j + 1].T @ small), 0.0
            err = b * abs(small[-1]) * nrm
            if err < tol or j == m - 1 or j + 1 == n:
                if err >= tol and j + 1 < n:
                    raise KrylovError(f"Arnoldi residual {err:.2e} > {tol:.1e} at m={m}; reduce dt")
                return nrm * (Q[: j + 1].T @ small), err
            Hm[j + 1, j] = b
            Q[j + 1] = w / b
    raise AssertionError("unreachable")


# --------------------------------------------------------------------------
# step bookkeeping


def step_plan(t_grid, dt: float):
    """Step boundaries: multiples of ``dt`` merged with the grid points.

    Returns ``(starts, widths, snap_after)`` where ``snap_after[i]`` is the
    number of steps completed when grid point ``i`` is reached.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D array")
    if np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be ascending")
    t0, t1 = t_grid[0], t_grid[-1]
    k0 = math.floor(t0 / dt + 1e-9) + 1
    k1 = math.ceil(t1 / dt - 1e-9)
    ticks = np.arange(k0, k1) * dt if k1 > k0 else np.zeros(0)
    bounds = np.union1d(ticks, t_grid)
    # drop slivers created by grid points sitting next to a tick
    keep = np.concatenate([[True], np.diff(bounds) > 1e-9 * max(dt, 1.0)])
    bounds = bounds[keep]
    for t in t_grid:
        j = np.argmin(np.abs(bounds - t))
        bounds[j] = t
    starts = bounds[:-1]
    widths = np.diff(bounds)
    snap_after = np.searchsorted(bounds, t_grid - 1e-12 * max(dt, 1.0))
    return starts, widths, snap_after


# --------------------------------------------------------------------------
# numba batch kernel for structured Hamiltonians


@numba.njit(cache=True)
def _csr_matvec(indptr, indices, data, x, out):
    n = indptr.size - 1
    for r in range(n):
        acc = 0j
        for p in range(indptr[r], indptr[r + 1]):
            acc += data[p] * x[indices[p]]
        out[r] = acc


@numba.njit(cache=True)
def _magnus_action(indptr, indices, hb, h1, dt, u, out, t1, t2, t3, t4):
    # out = dt Hb u + i dt^2 (Hb H1 u - H1 Hb u)
    _csr_matvec(indptr, indices, hb, u, t1)
    _csr_matvec(indptr, indices, h1, u, t2)
    _csr_matvec(indptr, indices, hb, t2, t3)
    _csr_matvec(indptr, indices, h1, t1, t4)
    c = 1j * dt * dt
    for i in range(u.size):
        out[i] = dt * t1[i] + c * (t3[i] - t4[i])


@numba.njit(cache=True)
def _lanczos_step(indptr, indices, hb, h1, dt, v, m, tol, Q, alpha, beta, w, t1, t2, t3, t4):
    n = v.size
    nrm = 0.0
    for i in range(n):
        nrm += v[i].real ** 2 + v[i].imag ** 2
    nrm = math.sqrt(nrm)
    for i in range(n):
        Q[0, i] = v[i] / nrm
    err = 0.0
    jmax = min(m, n)
    for j in range(jmax):
        _magnus_action(indptr, indices, hb, h1, dt, Q[j], w, t1, t2, t3, t4)
        a = 0.0
        for i in range(n):
            a += (Q[j, i].conjugate() * w[i]).real
        alpha[j] = a
        for i in range(n):
            w[i] -= a * Q[j, i]
        if j > 0:
            for i in range(n):
                w[i] -= beta[j - 1] * Q[j - 1, i]
        for k in range(j + 1):
            s = 0j
            for i in range(n):
                s += Q[k, i].conjugate() * w[i]
            for i in range(n):
                w[i] -= s * Q[k, i]
        b = 0.0
        for i in range(n):
            b += w[i].real ** 2 + w[i].imag ** 2
        b = math.sqrt(b)
        T = np.zeros((j + 1, j + 1))
        for k in range(j + 1):
            T[k, k] = alpha[k]
            if k < j:
                T[k, k + 1] = beta[k]
                T[k + 1, k] = beta[k]
        ev, Z = np.linalg.eigh(T)
        small = np.zeros(j + 1, dtype=np.complex128)
        for k in range(j + 1):
            ph = np.exp(-1j * ev[k]) * Z[0, k]
            for r in range(j + 1):
                small[r] += Z[r, k] * ph
        err = b * abs(small[j]) * nrm
        if b < tol or err < tol or j == jmax - 1:
            for i in range(n):
                acc = 0j
                for r in range(j + 1):
                    acc += Q[r, i] * small[r]
                v[i] = nrm * acc
            if b < tol:
                err = 0.0
            return err
        beta[j] = b
        for i in range(n):
            Q[j + 1, i] = w[i] / b
    return err


@numba.njit(cache=True, parallel=True)
def _evolve_batch(indptr, indices, data, c1, c2, widths, snap_after, V0, m, tol, out, resid, fail):
    nvec, n = V0.shape
    nsteps = widths.size
    K, nnz = data.shape
    nsnap = snap_after.size
    for b in numba.prange(nvec):
        v = V0[b].copy()
        Q = np.zeros((m + 1, n), dtype=np.complex128)
        alpha = np.zeros(m)
        beta = np.zeros(m)
        w = np.zeros(n, dtype=np.complex128)
        t1 = np.zeros(n, dtype=np.complex128)
        t2 = np.zeros(n, dtype=np.complex128)
        t3 = np.zeros(n, dtype=np.complex128)
        t4 = np.zeros(n, dtype=np.complex128)
        hb = np.zeros(nnz, dtype=np.complex128)
        h1 = np.zeros(nnz, dtype=np.complex128)
        s_idx = 0
        while s_idx < nsnap and snap_after[s_idx] == 0:
            out[s_idx, b] = v
            s_idx += 1
        for s in range(nsteps):
            for p in range(nnz):
                hb[p] = 0j
                h1[p] = 0j
            for k in range(K):
                a1 = c1[s, k]
                a2 = c2[s, k]
                cb = 0.5 * (a1 + a2)
                cd = 0.14433756729740643 * (a2 - a1)  # sqrt(3)/12
                if cb != 0.0 or cd != 0.0:
                    for p in range(nnz):
                        hb[p] += cb * data[k, p]
                        h1[p] += cd * data[k, p]
            err = _lanczos_step(indptr, indices, hb, h1, widths[s], v, m, tol, Q, alpha, beta, w, t1, t2, t3, t4)
            if err > resid[s]:
                resid[s] = err
            if err > tol and fail[b] < 0:
                fail[b] = s
            while s_idx < nsnap and snap_after[s_idx] == s + 1:
                out[s_idx, b] = v
                s_idx += 1


def _evolve_structured(sampler: StructuredSampler, config: MagnusConfig, V0: np.ndarray, t_grid) -> Trajectory:
    starts, widths, snap_after = step_plan(t_grid, config.dt)
    mid = starts + 0.5 * widths
    c1 = sampler.coefficients(mid - GL_OFFSET * widths)
    c2 = sampler.coefficients(mid + GL_OFFSET * widths)
    stack = sampler.stack
    nvec, n = V0.shape
    m = min(config.krylov_dim, n)
    out = np.zeros((len(t_grid), nvec, n), dtype=complex)
    resid = np.zeros(widths.size)
    fail = -np.ones(nvec, dtype=np.int64)
    _evolve_batch(
        stack.indptr.astype(np.int64),
        stack.indices.astype(np.int64),
        np.ascontiguousarray(stack.data, dtype=complex),
        np.ascontiguousarray(c1),
        np.ascontiguousarray(c2),
        widths,
        snap_after.astype(np.int64),
        np.ascontiguousarray(V0, dtype=complex),
        m,
        config.krylov_tol,
        out,
        resid,
        fail,
    )
    if np.any(fail >= 0):
        s = int(fail[fail >= 0].min())
        raise KrylovError(
            f"Lanczos residual {resid[s]:.2e} > {config.krylov_tol:.1e} at t={starts[s]:.4f} ns "
            f"with m={m}; reduce dt"
        )
    return Trajectory(np.asarray(t_grid, dtype=float), out, resid)


def evolve(sampler: GeneratorSampler, config: MagnusConfig, initial, t_grid) -> Trajectory:
    """Propagate ``initial`` (one vector or rows of a batch) over ``t_grid``.

    Steps are multiples of ``config.dt`` merged with the grid points, so
    every grid time is hit exactly.
    """
    V0 = np.asarray(initial, dtype=complex)
    single = V0.ndim == 1
    V0 = np.atleast_2d(V0)
    if V0.shape[1] != sampler.dim:
        raise ValueError(f"initial state dimension {V0.shape[1]} != generator dimension {sampler.dim}")
    t_grid = np.asarray(t_grid, dtype=float)
    if isinstance(sampler, StructuredSampler):
        traj = _evolve_structured(sampler, config, V0, t_grid)
    else:
        traj = _evolve_general(sampler, config, V0, t_grid)
    if single:
        traj.states = traj.states[:, 0]
    return traj


def _evolve_general(sampler: GeneratorSampler, config: MagnusConfig, V0: np.ndarray, t_grid) -> Trajectory:
    starts, widths, snap_after = step_plan(t_grid, config.dt)
    out = np.zeros((len(t_grid), V0.shape[0], V0.shape[1]), dtype=complex)
    resid = np.zeros(widths.size)
    V = V0.copy()
    s_idx = 0
    while s_idx < len(t_grid) and snap_after[s_idx] == 0:
        out[s_idx] = V
        s_idx += 1
    for s, (t, h) in enumerate(zip(starts, widths)):
        act = magnus_generator(sampler, t, h)
        for b in range(V.shape[0]):
            if not np.any(V[b]):
                continue
            V[b], err = krylov_expm_apply(act, V[b], config.krylov_dim, config.krylov_tol, hermitian=sampler.hamiltonian)
            resid[s] = max(resid[s], err)
        while s_idx < len(t_grid) and snap_after[s_idx] == s + 1:
            out[s_idx] = V
            s_idx += 1
    return Trajectory(t_grid, out, resid)


# --------------------------------------------------------------------------
# dense reference


def dense_magnus_evolve(H_of_t: Callable, psi0, t_grid, dt: float) -> np.ndarray:
    """Reference propagation with explicit commutators and eigendecomposition.

    ``H_of_t`` returns a dense hermitian matrix.  Uses the same step plan as
    :func:`evolve`; returns the state at every grid time.
    """
    starts, widths, snap_after = step_plan(t_grid, dt)
    psi = np.asarray(psi0, dtype=complex).copy()
    out = np.zeros((len(t_grid), psi.size), dtype=complex)
    s_idx = 0
    while s_idx < len(t_grid) and snap_after[s_idx] == 0:
        out[s_idx] = psi
        s_idx += 1
    for s, (t, h) in enumerate(zip(starts, widths)):
        mid = t + 0.5 * h
        Ha = H_of_t(mid - GL_OFFSET * h)
        Hc = H_of_t(mid + GL_OFFSET * h)
        Hb = 0.5 * (Ha + Hc)
        H1 = B1_WEIGHT * (Hc - Ha)
        A = h * Hb + 1j * h * h * (Hb @ H1 - H1 @ Hb)
        A = 0.5 * (A + A.conj().T)
        w, Z = np.linalg.eigh(A)
        psi = Z @ (np.exp(-1j * w) * (Z.conj().T @ psi))
        while s_idx < len(t_grid) and snap_after[s_idx] == s + 1:
            out[s_idx] = psi
            s_idx += 1
    return out


# --------------------------------------------------------------------------
# Lindblad


def vec(rho: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    d = int(round(math.sqrt(v.size))) if dim is None else dim
    return v.reshape((d, d), order="F")


def bose_einstein(omega, temperature) -> float:
    """Mean thermal occupation for angular frequency ``omega`` (rad/ns) at ``temperature`` (K)."""
    if temperature <= 0:
        return 0.0
    hbar = 1.054571817e-34
    kb = 1.380649e-23
    x = hbar * omega * 1e9 / (kb * temperature)
    return float(1.0 / np.expm1(x))


def lindblad_liouvillian(H, noise, space=None, frequencies: Mapping[str, float] | None = None) -> sp.csr_matrix:
    """Column-stacked Liouvillian.

    ``L = -i (I kron H - H^T kron I) + sum_k G_k [conj(L_k) kron L_k
    - (I kron Lk^+ Lk + (Lk^+ Lk)^T kron I) / 2]`` with, per mode, jump
    operators ``a`` at ``gamma (nbar + 1)``, ``a^+`` at ``gamma nbar`` and
    ``n`` at ``2 kappa_phi``.

    Parameters
    ----------
    H : SparseOperator or sparse matrix
    noise : NoiseSpec-like
        Needs ``rates(mode) -> (gamma, kappa_phi, nbar)`` and ``modes``.
    space : FockSpace
        Required when ``noise`` names any mode.
    frequencies : mapping, optional
        Mode frequencies for Bose-Einstein occupations.
    """
    Hm = sp.csr_matrix(H.matrix if isinstance(H, SparseOperator) else H)
    d = Hm.shape[0]
    I = sp.identity(d, format="csr", dtype=complex)
    L = -1j * (sp.kron(I, Hm) - sp.kron(Hm.T, I))
    from .model import local_operators

    for mode in getattr(noise, "modes", ()):
        gamma, kphi, nbar = noise.rates(mode, None if frequencies is None else frequencies.get(mode))
        for r in (gamma, kphi, nbar):
            if r < 0:
                raise ValueError(f"negative noise rate for mode {mode}")
        if space is None:
            raise ValueError("space required to build jump operators")
        a, ad, n = (op.matrix if isinstance(op, SparseOperator) else op for op in local_operators(space, mode))
        for rate, J in ((gamma * (nbar + 1.0), a), (gamma * nbar, ad), (2.0 * kphi, n)):
            if rate == 0:
                continue
            J = sp.csr_matrix(J, dtype=complex)
            JdJ = (J.conj().T @ J).tocsr()
            L = L + rate * (sp.kron(J.conj(), J) - 0.5 * (sp.kron(I, JdJ) + sp.kron(JdJ.T, I)))
    return sp.csr_matrix(L)


def liouvillian_sampler(H_func: Callable, noise, space, frequencies=None) -> GeneratorSampler:
    """Sampler for ``L(t)`` built from a Hamiltonian callback."""
    d = space.total_dim

    def f(t):
        return lindblad_liouvillian(H_func(t), noise, space, frequencies)

    return GeneratorSampler(f, d * d, hamiltonian=False)
