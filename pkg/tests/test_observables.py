import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eta_flow import observables
from eta_flow.effective import analytic_evolution, collective_matrix
from eta_flow.errors import DomainError
from eta_flow.eta import pair_state, state_a
from eta_flow.model import build_full, sector_basis, validate_spec
from eta_flow.observables import (crossing_time, default_window, dirac_probability, fidelity,
                                  loschmidt_echo, prepare_state, sample_times, scaling_fit,
                                  simulate, u_sweep, with_parameter)
from eta_flow.propagate import propagate


@pytest.fixture(scope="module")
def spec():
    return validate_spec({"geometry_name": "fig2-a1", "u": 10, "kappa": 1})


def test_hermitian_probability_is_one():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(12, 12))
    psi = rng.normal(size=12) + 0j
    psi /= np.linalg.norm(psi)
    traj = propagate(a + a.T, psi, np.linspace(0, 3, 7), "dense")
    assert np.allclose(dirac_probability(traj), 1, atol=1e-12)


def test_kappa_zero_probability(spec):
    s = spec.replace(kappa=0)
    series, _ = simulate(s, [0, 10, 100], engine="dense")
    assert np.allclose(series.p, 1, atol=1e-12)


def test_analytic_probability():
    sector = collective_matrix(2, 4, 1.0, 10.0)
    t = np.array([0.0, 5.0, 50.0])
    ana = analytic_evolution(sector, t)
    p = dirac_probability(ana.amplitudes)
    assert np.allclose(p, 1 + np.sum(np.abs(ana.amplitudes[:, 1:]) ** 2, axis=1))


def test_fidelity_trivial_cases(spec):
    a = state_a(spec).amplitudes
    b = pair_state(spec, 0, 2).amplitudes
    traj = propagate(build_full(spec, sector_basis(spec)), a, [0.0])
    assert fidelity(traj, a)[0] == pytest.approx(1)
    assert fidelity(traj, b)[0] == 0
    with pytest.raises(DomainError):
        fidelity(np.zeros((1, a.size)), a)
    with pytest.raises(DomainError):
        fidelity(traj, 2 * a)


def test_echo_trivial_cases(spec):
    a = state_a(spec).amplitudes
    traj = propagate(build_full(spec, sector_basis(spec)), a, [0.0, 1.0])
    echo, raw = loschmidt_echo(traj, a)
    assert echo[0] == pytest.approx(1) and raw[0] == pytest.approx(1)
    diag = np.diag(np.arange(5.0))
    psi = np.zeros(5, dtype=complex)
    psi[2] = 1
    echo, _ = loschmidt_echo(propagate(diag, psi, [0.5, 3.0], "dense"), psi)
    assert np.allclose(echo, 1)


def test_echo_is_inverse_probability(spec):
    # H^dag |A> = N_a U |A>, so <A|psi(t)> keeps unit modulus and the normalized echo is 1/P
    series, _ = simulate(spec, np.linspace(0, 200, 21))
    assert np.allclose(series.echo_raw, 1, atol=1e-8)
    assert np.allclose(series.echo, 1 / series.p, rtol=1e-7)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 30))
def test_bounds_on_random_dynamics(seed, t):
    rng = np.random.default_rng(seed)
    n = 10
    h = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    psi = rng.normal(size=n) + 1j * rng.normal(size=n)
    psi /= np.linalg.norm(psi)
    tgt = rng.normal(size=n) + 1j * rng.normal(size=n)
    tgt /= np.linalg.norm(tgt)
    traj = propagate(h * 0.3, psi, [t / 2, t], "dense")
    f = fidelity(traj, tgt)
    e, _ = loschmidt_echo(traj, psi)
    assert np.all((0 <= f) & (f <= 1)) and np.all((0 <= e) & (e <= 1))


def test_fit_exact_power_law():
    t = np.geomspace(1, 1000, 40)
    fit = scaling_fit(t, 3 * t**4)
    assert fit.slope == pytest.approx(4.0, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(3), abs=1e-10)
    assert fit.residual < 1e-12
    assert fit.window == (100.0, 1000.0)


def test_fit_errors():
    t = np.geomspace(1, 1000, 40)
    p = 3 * t**4
    with pytest.raises(DomainError):
        scaling_fit(t, p, (900, 1000))
    with pytest.raises(DomainError):
        scaling_fit(t, p, (0.1, 10))
    bad = p.copy()
    bad[-1] = 0
    with pytest.raises(DomainError):
        scaling_fit(t, bad, (100, 1000))
    with pytest.raises(DomainError):
        default_window(t, np.ones_like(t))


def test_default_window_respects_threshold():
    t = np.geomspace(1, 1000, 61)
    p = t**2  # P > 1e3 only beyond t ~ 31.6
    lo, hi = default_window(t, p)
    assert (lo, hi) == (100.0, 1000.0)
    p = t**0.5 * 40  # crosses 1e3 at t = 625
    lo, _ = default_window(t, p)
    assert lo == pytest.approx(t[p > 1e3].min())


def test_crossing_time():
    t = np.arange(6.0)
    assert crossing_time(t, [0, 0.5, 1, 0.8, 1, 1], 0.9) == 4.0
    assert crossing_time(t, [1] * 6, 0.9) == 0.0
    assert crossing_time(t, [0] * 6, 0.9) is None


def test_sample_times_include_snapshots():
    t = sample_times(1000, 161, "log", include=[10, 20, 40])
    assert t[0] == 0 and t[-1] == 1000
    for s in (10, 20, 40):
        assert s in t
    assert np.all(np.diff(t) > 0)
    lin = sample_times(40, 81, "linear")
    assert lin[1] == 0.5
    with pytest.raises(DomainError):
        sample_times(10, 5, "cubic")


def test_prepare_state_kinds(spec):
    v, b, label = prepare_state(spec, {"type": "doublons", "sites": [1]})
    assert b.sector == (1, 1) and "1" in label
    with pytest.raises(DomainError, match="A-site"):
        prepare_state(spec, {"type": "doublons", "sites": [3]})
    with pytest.raises(DomainError):
        prepare_state(spec, {"type": "pair-state", "n": 1})
    with pytest.raises(DomainError):
        prepare_state(spec, {"type": "coherent"})
    with pytest.raises(DomainError, match="sectors"):
        simulate(spec, [0, 1], {"type": "doublons", "sites": [0]}, {"type": "pair-state", "n": 0, "m": 2})


def test_single_u_sweep_equals_direct(spec):
    times = np.linspace(0, 40, 41)
    res = u_sweep(spec, [5.0], times, [10, 20, 40])
    direct, _ = simulate(spec.replace(u=5.0), times)
    assert res.fidelity[5.0] == [direct.at(t)["F"] for t in (10, 20, 40)]
    assert res.table()[0] == (5.0, 10.0, direct.at(10)["F"])


def test_sweep_records_cell_errors(spec, monkeypatch):
    real = observables.simulate

    def flaky(s, *args, **kwargs):
        if s.u == 2.0:
            raise RuntimeError("boom")
        return real(s, *args, **kwargs)

    monkeypatch.setattr(observables, "simulate", flaky)
    res = u_sweep(spec, [1.0, 2.0, 3.0], np.linspace(0, 10, 11), [10.0])
    assert set(res.fidelity) == {1.0, 3.0}
    assert "boom" in res.errors[2.0]


def test_sweep_rejects_unsampled_snapshot(spec):
    with pytest.raises(DomainError):
        u_sweep(spec, [1.0], np.linspace(0, 10, 11), [10.5])


def test_parallel_sweep_matches_serial(spec):
    times = np.linspace(0, 20, 21)
    serial = u_sweep(spec, [3.0, 6.0], times, [20.0])
    parallel = u_sweep(spec, [3.0, 6.0], times, [20.0], jobs=2)
    assert serial.fidelity == parallel.fidelity


def test_hopping_sweep_monotone():
    # uniform J on a four-site ring at U = 20: larger J transfers pairs faster
    base = validate_spec({"geometry_name": "ring4-uniform", "u": 20, "kappa": 1})
    grid = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0]
    snaps = [20.0, 40.0, 100.0]
    res = u_sweep(base, grid, sample_times(100, 41, "linear", include=snaps), snaps, param="J")
    for k in range(len(snaps)):
        f = [res.fidelity[j][k] for j in grid]
        assert all(b >= a for a, b in zip(f, f[1:]))


def test_with_parameter(spec):
    s = with_parameter(spec, "J", 0.5)
    assert all(j == 0.5 for *_, j in s.bonds) and s.beta == spec.beta
    with pytest.raises(DomainError):
        with_parameter(spec, "mu", 1.0)
