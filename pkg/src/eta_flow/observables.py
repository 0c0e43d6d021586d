"""Measured quantities on trajectories: Dirac probability, fidelity, echo, fits.

All overlaps are taken against the un-normalized evolved state and divided
by its norm where a probability in [0, 1] is wanted.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import DomainError
from .eta import doublon_product, pair_state
from .fock import FockBasis
from .model import LatticeSpec, build_full, validate_spec
from .propagate import Trajectory, propagate

# Cauchy-Schwarz slack for rounding in overlaps
_BOUND_SLACK = 1e-9
FIT_THRESHOLD = 1e3
MIN_FIT_POINTS = 8


def _states(trajectory) -> np.ndarray:
    if isinstance(trajectory, Trajectory):
        return trajectory.states
    return np.atleast_2d(np.asarray(trajectory, dtype=complex))


def dirac_probability(trajectory) -> np.ndarray:
    """``P(t) = ||psi(t)||^2`` for every sample."""
    states = _states(trajectory)
    return np.sum(np.abs(states) ** 2, axis=1)


def _check_unit(vec: np.ndarray, name: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex)
    if abs(np.linalg.norm(vec) - 1) > 1e-10:
        raise DomainError(f"{name} must be normalized, |{name}| = {np.linalg.norm(vec):.3g}")
    return vec


def _in_unit_interval(values: np.ndarray, name: str) -> np.ndarray:
    if np.any(values < -_BOUND_SLACK) or np.any(values > 1 + _BOUND_SLACK):
        raise AssertionError(f"{name} left [0, 1]: range [{values.min()}, {values.max()}]")
    return np.clip(values, 0.0, 1.0)


def fidelity(trajectory, target) -> np.ndarray:
    """``F(t) = |<target|psi(t)>| / ||psi(t)||``."""
    target = _check_unit(target, "target")
    states = _states(trajectory)
    norms = np.linalg.norm(states, axis=1)
    if np.any(norms == 0):
        raise DomainError("fidelity undefined for a zero-norm evolved state")
    return _in_unit_interval(np.abs(states @ target.conj()) / norms, "fidelity")


def loschmidt_echo(trajectory, initial) -> tuple[np.ndarray, np.ndarray]:
    """Normalized echo ``|<psi0|psi(t)>|^2 / P(t)`` and the raw ``|<psi0|psi(t)>|^2``."""
    initial = _check_unit(initial, "initial")
    states = _states(trajectory)
    raw = np.abs(states @ initial.conj()) ** 2
    p = np.sum(np.abs(states) ** 2, axis=1)
    if np.any(p == 0):
        raise DomainError("echo undefined for a zero-norm evolved state")
    return _in_unit_interval(raw / p, "echo"), raw


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    window: tuple[float, float]
    residual: float
    n_points: int

    def to_document(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "window": list(self.window),
                "residual": self.residual, "n_points": self.n_points}


def default_window(t, p, threshold: float = FIT_THRESHOLD) -> tuple[float, float]:
    """Last decade of the sampled times, restricted to samples with P above ``threshold``."""
    t, p = np.asarray(t, float), np.asarray(p, float)
    hot = (p > threshold) & (t > 0)
    if not np.any(hot):
        raise DomainError(f"no samples with P > {threshold:g}; extend t_max or pass a window")
    t_hi = float(t.max())
    return max(t_hi / 10, float(t[hot].min())), t_hi


def scaling_fit(t, p, window: tuple[float, float] | None = None) -> FitResult:
    """Least-squares line through ``(ln t, ln P)`` inside ``window``."""
    t, p = np.asarray(t, float), np.asarray(p, float)
    if window is None:
        window = default_window(t, p)
    lo, hi = window
    if lo <= 0 or hi < lo:
        raise DomainError(f"fit window must satisfy 0 < t_min <= t_max, got {window}")
    if lo < t.min() * (1 - 1e-12) or hi > t.max() * (1 + 1e-12):
        raise DomainError(f"fit window {window} outside sampled range [{t.min()}, {t.max()}]")
    mask = (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))
    if mask.sum() < MIN_FIT_POINTS:
        raise DomainError(f"fit window holds {mask.sum()} samples, need at least {MIN_FIT_POINTS}")
    if np.any(p[mask] <= 0):
        raise DomainError("scaling_fit needs P > 0 throughout the window")
    x, y = np.log(t[mask]), np.log(p[mask])
    slope, intercept = np.polyfit(x, y, 1)
    rms = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return FitResult(float(slope), float(intercept), (float(lo), float(hi)), rms, int(mask.sum()))


@dataclass
class TimeSeries:
    t: np.ndarray
    p: np.ndarray
    f: np.ndarray
    echo: np.ndarray
    echo_raw: np.ndarray
    norm: np.ndarray
    metadata: dict = field(default_factory=dict)
    fit: FitResult | None = None

    COLUMNS = ("t", "P", "F", "echo_normalized", "echo_raw", "norm")

    @property
    def rows(self) -> list[tuple[float, ...]]:
        cols = (self.t, self.p, self.f, self.echo, self.echo_raw, self.norm)
        return [tuple(float(c[k]) for c in cols) for k in range(len(self.t))]

    def at(self, t: float) -> dict[str, float]:
        k = int(np.argmin(np.abs(self.t - t)))
        if not math.isclose(self.t[k], t, rel_tol=1e-9, abs_tol=1e-12):
            raise DomainError(f"t={t} was not sampled")
        return dict(zip(self.COLUMNS, self.rows[k]))


def time_series(trajectory: Trajectory, initial, target, metadata=None) -> TimeSeries:
    norms = trajectory.norms
    echo, raw = loschmidt_echo(trajectory, initial)
    return TimeSeries(trajectory.times, norms**2, fidelity(trajectory, target), echo, raw, norms,
                      dict(metadata or {}))


def prepare_state(spec: LatticeSpec, doc: Mapping[str, Any] | None) -> tuple[np.ndarray, FockBasis, str]:
    """Resolve a state description to ``(vector, basis, label)``.

    Kinds: ``filled-A`` (every source site doubly occupied), ``doublons``
    (``sites`` lists A-site indices), ``pair-state`` (``n`` A-pairs and ``m``
    B-pairs).  Omitted means ``filled-A``.
    """
    doc = dict(doc or {"type": "filled-A"})
    kind = doc.get("type", "filled-A")
    if kind == "filled-A":
        vec, basis = doublon_product(spec, list(spec.a_sites))
        return vec, basis, f"filled-A({spec.n_a})"
    if kind == "doublons":
        sites = list(doc.get("sites", []))
        bad = [s for s in sites if not 0 <= int(s) < spec.n_a]
        if bad:
            raise DomainError(f"doublon placement {bad} is not an A-site (0..{spec.n_a - 1})")
        vec, basis = doublon_product(spec, [int(s) for s in sites])
        return vec, basis, "doublons" + str(sorted(int(s) for s in sites))
    if kind == "pair-state":
        for key in ("n", "m"):
            if key not in doc:
                raise DomainError(f"pair-state needs {key!r}")
        ps = pair_state(spec, int(doc["n"]), int(doc["m"]))
        return ps.amplitudes, ps.basis, ps.label
    raise DomainError(f"unknown state type {kind!r}; use filled-A, doublons or pair-state")


def default_target(spec: LatticeSpec, pairs: int | None = None) -> dict:
    """All pairs on the Hubbard cluster: ``|0>_A |pairs>_B``."""
    return {"type": "pair-state", "n": 0, "m": spec.n_a if pairs is None else pairs}


def simulate(spec: LatticeSpec, times, initial=None, target=None, engine="krylov",
             tolerance=1e-8) -> tuple[TimeSeries, Trajectory]:
    """Evolve ``initial`` under the full H and collect every observable."""
    psi0, basis, init_label = prepare_state(spec, initial)
    tgt, tbasis, tgt_label = prepare_state(spec, target or default_target(spec, basis.n_up))
    if tbasis != basis:
        raise DomainError(f"initial ({init_label}) and target ({tgt_label}) lie in different sectors")
    traj = propagate(build_full(spec, basis), psi0, times, engine, tolerance)
    meta = {"initial": init_label, "target": tgt_label, "engine": traj.engine, "dim": basis.dim}
    return time_series(traj, psi0, tgt, meta), traj


def with_parameter(spec: LatticeSpec, param: str, value: float) -> LatticeSpec:
    """Copy of ``spec`` with ``U`` replaced, or every hopping set to the uniform ``J``."""
    if param in ("u", "U"):
        return spec.replace(u=float(value))
    if param in ("J", "j"):
        return spec.replace(bonds=[[i, j, float(value)] for i, j, _ in spec.bonds],
                            beta=list(spec.beta))
    if param == "kappa":
        return spec.replace(kappa=float(value))
    raise DomainError(f"cannot sweep {param!r}; choose u, J or kappa")


@dataclass
class SweepResult:
    param: str
    values: list[float]
    snapshots: list[float]
    fidelity: dict[float, list[float]]
    errors: dict[float, str]
    series: dict[float, TimeSeries]

    def table(self) -> list[tuple[float, float, float]]:
        """``(value, t, F)`` rows ordered by value then time; failed cells are skipped."""
        out = []
        for v in sorted(self.fidelity):
            out += [(v, t, f) for t, f in zip(self.snapshots, self.fidelity[v])]
        return out

    def argmax(self, t: float) -> float:
        k = self.snapshots.index(t)
        good = {v: f[k] for v, f in self.fidelity.items()}
        return max(good, key=good.get)


def _sweep_cell(args):
    spec_doc, param, value, times, initial, target, engine, tol = args
    try:
        spec = with_parameter(validate_spec(spec_doc), param, value)
        series, _ = simulate(spec, times, initial, target, engine, tol)
        return value, series, None
    except Exception as exc:  # recorded per cell, the sweep goes on
        return value, None, f"{type(exc).__name__}: {exc}"


def u_sweep(spec: LatticeSpec, values: Sequence[float], times, snapshots: Sequence[float] | None = None,
            initial=None, target=None, param: str = "u", engine="krylov", tolerance=1e-8,
            jobs: int = 1) -> SweepResult:
    """One evolution per grid value; fidelities read at ``snapshots`` (default: every time)."""
    times = np.asarray(times, float)
    snapshots = list(times if snapshots is None else snapshots)
    missing = [s for s in snapshots if not np.any(np.isclose(times, s, rtol=1e-12, atol=0))]
    if missing:
        raise DomainError(f"snapshot times {missing} are not among the sampled times")
    cells = [(spec.to_document(), param, float(v), times, initial, target, engine, tolerance)
             for v in values]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    fid, errors, series = {}, {}, {}
    for value, ts, err in results:
        if err is not None:
            errors[value] = err
            continue
        series[value] = ts
        fid[value] = [ts.at(s)["F"] for s in snapshots]
    return SweepResult(param, [float(v) for v in values], [float(s) for s in snapshots], fid, errors, series)


def sample_times(t_max: float = 1000.0, n_samples: int = 161, spacing: str = "log",
                 t_min: float | None = None, include: Sequence[float] = ()) -> np.ndarray:
    """Sampling grid starting at 0, with ``include`` merged in."""
    if t_max <= 0 or n_samples < 2:
        raise DomainError("need t_max > 0 and n_samples >= 2")
    if spacing == "linear":
        grid = np.linspace(0.0, t_max, n_samples)
    elif spacing == "log":
        lo = t_max * 1e-4 if t_min is None else t_min
        if not 0 < lo < t_max:
            raise DomainError(f"log spacing needs 0 < t_min < t_max, got {lo}")
        grid = np.concatenate([[0.0], np.geomspace(lo, t_max, n_samples - 1)])
    else:
        raise DomainError(f"spacing must be 'linear' or 'log', got {spacing!r}")
    extra = [float(x) for x in include if 0 <= x <= t_max]
    return np.unique(np.concatenate([grid, extra]))


def crossing_time(t, values, level: float) -> float | None:
    """First sampled time from which ``values`` stays at or above ``level``; None if never."""
    t, values = np.asarray(t, float), np.asarray(values, float)
    below = np.nonzero(values < level)[0]
    if len(below) == 0:
        return float(t[0])
    last = below[-1]
    return None if last == len(t) - 1 else float(t[last + 1])
