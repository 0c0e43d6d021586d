"""Time evolution ``psi(t) = exp(-iHt) psi(0)`` for non-Hermitian sparse H.

No normalization is ever applied: under non-Hermitian dynamics the norm
growth is itself an observable.

Engines
-------
``dense``   Pade scaling-and-squaring exponential of the dense matrix.
``rk``      Dormand-Prince 5(4) embedded pair, step control relative to |psi|.
``krylov``  Arnoldi projection with residual-based time-step splitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConvergenceError, DomainError, EngineError

DENSE_MAX_DIM = 2048
KRYLOV_MAX_DIM = 40

ENGINE_ALIASES = {
    "dense": "dense",
    "dense-exponential": "dense",
    "rk": "rk",
    "adaptive": "rk",
    "adaptive-integrator": "rk",
    "krylov": "krylov",
}


def canonical_engine(name: str) -> str:
    try:
        return ENGINE_ALIASES[name]
    except KeyError:
        raise DomainError(f"unknown engine {name!r}; choose from dense, rk, krylov") from None


def as_matrix(hamiltonian):
    """Return a scipy CSR matrix (or dense ndarray) for any supported operator type."""
    m = getattr(hamiltonian, "matrix", hamiltonian)
    if sp.issparse(m):
        return sp.csr_matrix(m, dtype=complex)
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"hamiltonian must be square, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class EvolutionRequest:
    hamiltonian: object
    initial: np.ndarray
    times: Sequence[float]
    engine: str = "krylov"
    tolerance: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "engine", canonical_engine(self.engine))
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or len(times) == 0:
            raise DomainError("times must be a non-empty 1-d sequence")
        if times[0] < 0 or np.any(np.diff(times) <= 0):
            raise DomainError("times must be nonnegative and strictly increasing")
        object.__setattr__(self, "times", times)
        if not 0 < self.tolerance <= 1e-2:
            raise DomainError(f"tolerance must lie in (0, 1e-2], got {self.tolerance}")
        initial = np.asarray(self.initial, dtype=complex)
        dim = as_matrix(self.hamiltonian).shape[0]
        if initial.shape != (dim,):
            raise DomainError(f"initial vector has shape {initial.shape}, hamiltonian dimension is {dim}")
        object.__setattr__(self, "initial", initial)


@dataclass(frozen=True)
class Sample:
    t: float
    state: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.state))


@dataclass
class Trajectory:
    samples: list[Sample]
    engine: str
    steps: int = 0
    rejected: int = 0
    max_error_estimate: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.samples])

    @property
    def states(self) -> np.ndarray:
        return np.array([s.state for s in self.samples])

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.states, axis=1)

    def report(self) -> dict:
        return {"engine": self.engine, "steps": self.steps, "rejected": self.rejected,
                "max_error_estimate": self.max_error_estimate, **self.extra}


def evolve(request: EvolutionRequest) -> Trajectory:
    h = as_matrix(request.hamiltonian)
    runner = {"dense": _evolve_dense, "rk": _evolve_rk, "krylov": _evolve_krylov}[request.engine]
    return runner(h, request.initial, request.times, request.tolerance)


def propagate(hamiltonian, initial, times, engine="krylov", tolerance=1e-8) -> Trajectory:
    return evolve(EvolutionRequest(hamiltonian, initial, times, engine, tolerance))


def cross_validate(hamiltonian, initial, t: float, engines=("dense", "krylov"), tolerance=1e-10) -> float:
    """Largest componentwise difference between two engines at time ``t``."""
    first, second = engines
    times = [float(t)]
    a = propagate(hamiltonian, initial, times, first, tolerance).samples[-1].state
    b = propagate(hamiltonian, initial, times, second, tolerance).samples[-1].state
    return float(np.max(np.abs(a - b)))


def _evolve_dense(h, psi0, times, tol):
    dim = h.shape[0]
    if dim > DENSE_MAX_DIM:
        raise EngineError(f"dense engine refuses dimension {dim} > {DENSE_MAX_DIM}; use krylov")
    a = h.toarray() if sp.issparse(h) else h
    cache: dict[float, np.ndarray] = {}
    psi = psi0.copy()
    t_now = 0.0
    samples = []
    for t in times:
        dt = float(t - t_now)
        if dt > 0:
            if dt not in cache:
                cache[dt] = sla.expm(-1j * dt * a)
            psi = cache[dt] @ psi
        t_now = float(t)
        samples.append(Sample(t_now, psi.copy()))
    return Trajectory(samples, "dense", steps=len(cache))


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _evolve_rk(h, psi0, times, tol, max_steps=10_000_000):
    def rhs(y):
        return -1j * (h @ y)

    anorm = _inf_norm(h)
    y = psi0.copy()
    t_now = 0.0
    k_first = rhs(y)
    hstep = 0.1 / max(anorm, 1e-300) if anorm > 0 else float(times[-1]) or 1.0
    steps = rejected = 0
    worst = 0.0
    samples = []
    # local error target is kept a decade below the requested accuracy
    rtol = tol / 10
    for t_out in times:
        t_out = float(t_out)
        while t_now < t_out:
            remaining = t_out - t_now
            dt = min(hstep, remaining)
            reaches = dt >= remaining
            if dt <= 1e-14 * max(abs(t_now), 1.0):
                raise ConvergenceError("rk step size underflow", t=t_now, step=dt,
                                       norm=float(np.linalg.norm(y)), steps=steps)
            ks = [k_first]
            for stage in range(1, 7):
                incr = sum(a * k for a, k in zip(_A[stage], ks) if a)
                ks.append(rhs(y + dt * incr))
            y_new = y + dt * sum(b * k for b, k in zip(_B5, ks) if b)
            err_vec = dt * sum(e * k for e, k in zip(_E, ks) if e)
            scale = rtol * max(np.linalg.norm(y), np.linalg.norm(y_new))
            ratio = np.linalg.norm(err_vec) / scale if scale > 0 else 0.0
            factor = 5.0 if ratio == 0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
            if ratio <= 1.0:
                t_now = t_out if reaches else t_now + dt
                y = y_new
                k_first = ks[6]
                steps += 1
                worst = max(worst, ratio * rtol)
                if dt == hstep:
                    hstep = dt * factor
            else:
                rejected += 1
                hstep = dt * factor
            if steps + rejected > max_steps:
                raise ConvergenceError("rk step budget exhausted", t=t_now, steps=steps)
        samples.append(Sample(t_out, y.copy()))
    return Trajectory(samples, "rk", steps=steps, rejected=rejected, max_error_estimate=worst)


def _inf_norm(h) -> float:
    if sp.issparse(h):
        return float(abs(h).sum(axis=1).max()) if h.shape[0] else 0.0
    return float(np.abs(h).sum(axis=1).max()) if h.shape[0] else 0.0


def _round_step(tau: float) -> float:
    s = 10.0 ** (math.floor(math.log10(tau)) - 1)
    return math.ceil(tau / s) * s


def _evolve_krylov(h, psi0, times, tol, m_max=KRYLOV_MAX_DIM, max_reject=50):
    n = h.shape[0]
    m = max(1, min(m_max, n))
    anorm = _inf_norm(h)
    psi = psi0.copy()
    samples = []
    if anorm == 0 or not np.any(psi):
        return Trajectory([Sample(float(t), psi.copy()) for t in times], "krylov")
    t_final = float(times[-1])
    gamma, delta = 0.9, 1.2
    btol = 1e-13 * anorm
    fact = ((m + 1) / math.e) ** (m + 1) * math.sqrt(2 * math.pi * (m + 1))
    tau_next = _round_step((1 / anorm) * (fact * tol / (4 * anorm)) ** (1 / m))
    t_now = 0.0
    steps = rejected = 0
    worst = 0.0
    V = np.zeros((m + 2, n), dtype=complex)
    for t_out in times:
        t_out = float(t_out)
        while t_out - t_now > 1e-15 * max(t_out, 1.0):
            beta = np.linalg.norm(psi)
            tau = min(t_out - t_now, tau_next)
            Hm = np.zeros((m + 2, m + 2), dtype=complex)
            V[0] = psi / beta
            k1, mb = 2, m
            for j in range(m):
                p = h @ V[j]
                for _ in range(2):  # classical Gram-Schmidt with one reorthogonalization
                    c = V[: j + 1].conj() @ p
                    p -= c @ V[: j + 1]
                    Hm[: j + 1, j] += c
                s = np.linalg.norm(p)
                if s < btol:
                    k1, mb = 0, j + 1
                    tau = t_out - t_now
                    break
                Hm[j + 1, j] = s
                V[j + 1] = p / s
            avnorm = 0.0
            if k1:
                Hm[m + 1, m] = 1.0
                avnorm = np.linalg.norm(h @ V[m])
            # error budget per unit time, relative to the current norm
            budget = tol * beta / max(t_final, 1e-300)
            rejects = 0
            while True:
                mx = mb + k1
                F = sla.expm(-1j * tau * Hm[:mx, :mx])
                if k1 == 0:
                    err = 0.0
                    xm = 1 / m
                    break
                phi1 = abs(beta * F[m, 0])
                phi2 = abs(beta * F[m + 1, 0] * avnorm)
                if phi1 > 10 * phi2:
                    err, xm = phi2, 1 / m
                elif phi1 > phi2:
                    err, xm = phi1 * phi2 / (phi1 - phi2), 1 / m
                else:
                    err, xm = phi1, 1 / max(m - 1, 1)
                if err <= delta * tau * budget:
                    break
                rejects += 1
                rejected += 1
                if rejects > max_reject:
                    raise ConvergenceError("krylov step rejected too often", t=t_now, step=tau,
                                           error=err, norm=beta)
                tau = _round_step(gamma * tau * (tau * budget / err) ** xm)
                tau = min(tau, t_out - t_now)
            mx = mb + max(0, k1 - 1)
            psi = (beta * F[:mx, 0]) @ V[:mx]
            t_now = t_out if tau >= t_out - t_now else t_now + tau
            steps += 1
            worst = max(worst, err / beta if beta else 0.0)
            if err > 0:
                tau_next = _round_step(gamma * tau * (tau * budget / err) ** xm)
            else:
                tau_next = max(tau_next, 2 * tau) if k1 else tau_next
            if not np.all(np.isfinite(psi)):
                raise ConvergenceError("krylov state became non-finite", t=t_now)
        samples.append(Sample(t_out, psi.copy()))
    return Trajectory(samples, "krylov", steps=steps, rejected=rejected, max_error_estimate=worst)
