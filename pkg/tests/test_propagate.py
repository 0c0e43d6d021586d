import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from eta_flow.errors import ConvergenceError, DomainError, EngineError
from eta_flow.eta import state_a
from eta_flow.model import build_full, sector_basis, two_site_solution, validate_spec
from eta_flow.propagate import (EvolutionRequest, canonical_engine, cross_validate, evolve,
                                propagate)

ENGINES = ("dense", "rk", "krylov")


def random_nonhermitian(n, density=0.05, seed=0):
    rng = np.random.default_rng(seed)
    m = sp.random(n, n, density=density, random_state=rng, format="csr", dtype=float)
    m = m + 1j * sp.random(n, n, density=density, random_state=rng, format="csr")
    return m.tocsr()


def unit(n, seed=1):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


@pytest.fixture(scope="module")
def fig2a1():
    spec = validate_spec({"geometry_name": "fig2-a1", "u": 10, "kappa": 1})
    b = sector_basis(spec)
    return build_full(spec, b), state_a(spec).amplitudes


@pytest.mark.parametrize("engine", ENGINES)
def test_zero_hamiltonian(engine):
    psi = unit(6)
    traj = propagate(np.zeros((6, 6)), psi, [0.0, 1.0, 5.0], engine)
    for s in traj.samples:
        assert np.array_equal(s.state, psi)


@pytest.mark.parametrize("engine", ENGINES)
def test_hermitian_norm(engine):
    rng = np.random.default_rng(3)
    a = rng.normal(size=(30, 30)) + 1j * rng.normal(size=(30, 30))
    h = (a + a.conj().T) / 2
    traj = propagate(h, unit(30), np.linspace(0, 5, 11), engine, 1e-9)
    assert np.allclose(traj.norms, 1, atol=1e-8)


@pytest.mark.parametrize("engine", ENGINES)
def test_two_site_closed_form(engine):
    sol = two_site_solution(20.0, 1.0)
    ts = np.linspace(0, 10, 200)
    traj = propagate(sol.h, np.array([1, 0, 0, 0], dtype=complex), ts, engine, 1e-10)
    assert np.max(np.abs(traj.states[:, 1] - sol.amp_2(ts))) <= 1e-8


def test_cross_validate_fig2a1(fig2a1):
    h, psi = fig2a1
    assert cross_validate(h, psi, 10.0, ("dense", "rk"), 1e-10) <= 1e-7
    assert cross_validate(h, psi, 10.0, ("dense", "krylov"), 1e-10) <= 1e-7
    assert cross_validate(h, psi, 10.0, ("krylov", "krylov")) == 0


def test_cross_validate_random_sparse():
    h = random_nonhermitian(200)
    psi = unit(200)
    assert cross_validate(h, psi, 2.0, ("dense", "krylov"), 1e-10) <= 1e-7


@pytest.mark.parametrize("engine", ["rk", "krylov"])
def test_semigroup(engine, fig2a1):
    h, psi = fig2a1
    tol = 1e-9
    direct = propagate(h, psi, [7.0], engine, tol).samples[-1].state
    mid = propagate(h, psi, [3.0], engine, tol).samples[-1].state
    split = propagate(h, mid, [4.0], engine, tol).samples[-1].state
    assert np.linalg.norm(direct - split) <= 10 * tol * np.linalg.norm(direct)


@pytest.mark.parametrize("engine", ENGINES)
def test_forward_then_reversed(engine, fig2a1):
    h, psi = fig2a1
    tol = 1e-9
    fwd = propagate(h, psi, [2.0], engine, tol).samples[-1].state
    back = propagate(-h.matrix, fwd, [2.0], engine, tol).samples[-1].state
    assert np.linalg.norm(back - psi) <= 10 * tol * np.linalg.norm(fwd)


@settings(max_examples=10, deadline=None)
@given(st.integers(8, 512), st.integers(0, 10_000), st.floats(0.1, 3.0))
def test_krylov_matches_dense(n, seed, t):
    h = random_nonhermitian(n, density=min(1.0, 6 / n), seed=seed)
    psi = unit(n, seed + 1)
    dense = propagate(h, psi, [t], "dense").samples[-1].state
    kry = propagate(h, psi, [t], "krylov", 1e-10).samples[-1].state
    assert np.max(np.abs(dense - kry)) <= 1e-7 * max(1.0, np.linalg.norm(dense))


@pytest.mark.parametrize("engine", ENGINES)
def test_bit_identical_reruns(engine, fig2a1):
    h, psi = fig2a1
    ts = [0.5, 2.0, 4.0]
    a = propagate(h, psi, ts, engine).states
    b = propagate(h, psi, ts, engine).states
    assert np.array_equal(a, b)


def test_no_normalization(fig2a1):
    h, psi = fig2a1
    traj = propagate(h, psi, [0.0, 50.0, 100.0])
    assert traj.norms[0] == pytest.approx(1)
    assert traj.norms[2] > traj.norms[1] > 1
    assert np.allclose(traj.norms, [s.norm for s in traj.samples])


def test_dense_refuses_large():
    n = 2049
    h = sp.identity(n, format="csr", dtype=complex)
    with pytest.raises(EngineError, match="krylov"):
        propagate(h, np.ones(n), [1.0], "dense")


def test_rk_underflow_diagnostics():
    h = np.array([[0, 1e20], [0, 0]], dtype=complex)
    with pytest.raises(ConvergenceError) as info:
        propagate(h, np.array([0, 1], dtype=complex), [1.0], "rk", 1e-8)
    assert "norm" in info.value.diagnostics


@pytest.mark.parametrize("times", [[], [1.0, 0.5], [-1.0, 1.0], [1.0, 1.0]])
def test_bad_times(times):
    with pytest.raises(DomainError):
        EvolutionRequest(np.eye(2), np.ones(2), times)


@pytest.mark.parametrize("tol", [0.0, 0.1, -1e-8])
def test_bad_tolerance(tol):
    with pytest.raises(DomainError):
        EvolutionRequest(np.eye(2), np.ones(2), [1.0], tolerance=tol)


def test_dimension_mismatch_and_engine_names():
    with pytest.raises(DomainError):
        EvolutionRequest(np.eye(3), np.ones(2), [1.0])
    with pytest.raises(DomainError):
        canonical_engine("euler")
    assert canonical_engine("adaptive-integrator") == "rk"
    assert canonical_engine("dense-exponential") == "dense"


def test_report_fields(fig2a1):
    h, psi = fig2a1
    traj = evolve(EvolutionRequest(h, psi, [1.0, 2.0], "krylov"))
    rep = traj.report()
    assert rep["engine"] == "krylov" and rep["steps"] > 0 and rep["max_error_estimate"] >= 0


def test_jordan_block_growth():
    # exp(-i t (N + I)) on a 2x2 block is polynomial in t up to the phase
    h = np.array([[1, 0], [1, 1]], dtype=complex)
    ts = np.array([1.0, 10.0, 100.0])
    for engine in ENGINES:
        states = propagate(h, np.array([1, 0], dtype=complex), ts, engine, 1e-10).states
        exact = np.array([sla.expm(-1j * t * h)[:, 0] for t in ts])
        assert np.allclose(states, exact, rtol=1e-7, atol=1e-9)
