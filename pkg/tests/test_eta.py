import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eta_flow.errors import DomainError
from eta_flow.eta import (apply_pair_creation, build_eta, commutator_residuals, odlro_expected,
                          omega, pair_correlation, pair_state, state_a, state_b)
from eta_flow.fock import DOWN, UP, FockState, adjoint, build_basis, add
from eta_flow.model import (a_particle_number, build_h_a, build_h_ab, build_h_b, sector_basis,
                            validate_spec)


@pytest.fixture(scope="module")
def ring_spec():
    return validate_spec({"geometry_name": "fig2-a1", "u": 3.0, "kappa": 1})


def _brute_eta_b_squared_norm(spec):
    """||(sum_i beta_i D_i)^2 |Vac>||^2 by expanding into ordered site pairs."""
    amps = {}
    for i, j in itertools.product(range(spec.n_b), repeat=2):
        if i == j:
            continue
        key = frozenset((i, j))
        # doublon creators commute, so each ordered pair hits the same configuration
        amps[key] = amps.get(key, 0) + spec.beta[i] * spec.beta[j]
    return sum(abs(a) ** 2 for a in amps.values())


def test_omega_matches_brute_force(ring_spec):
    ps = pair_state(ring_spec, 0, 2)
    assert ps.raw_norm_sq == pytest.approx(24.0)
    assert _brute_eta_b_squared_norm(ring_spec) == 24
    assert ps.omega_b == omega(4, 2) == 24


@pytest.mark.parametrize("n, m", [(0, 0), (1, 0), (2, 0), (0, 3), (1, 2), (2, 4)])
def test_pair_states_normalized_with_omega(ring_spec, n, m):
    ps = pair_state(ring_spec, n, m)
    assert np.linalg.norm(ps.amplitudes) == pytest.approx(1, abs=1e-14)
    assert ps.raw_norm_sq == pytest.approx(ps.omega_a * ps.omega_b, rel=1e-12)


@pytest.mark.parametrize("n, m", [(1, 0), (2, 1), (0, 2), (1, 3), (2, 4)])
def test_pair_states_are_eigenstates(ring_spec, n, m):
    ps = pair_state(ring_spec, n, m)
    h = build_h_a(ring_spec, ps.basis) + build_h_b(ring_spec, ps.basis)
    resid = h @ ps.amplitudes - (n + m) * ring_spec.u * ps.amplitudes
    assert np.linalg.norm(resid) <= 1e-12


def test_pair_state_range_errors(ring_spec):
    with pytest.raises(DomainError):
        pair_state(ring_spec, 3, 0)
    with pytest.raises(DomainError):
        pair_state(ring_spec, 0, 5)


def test_hardcore_constraint(ring_spec):
    spec = validate_spec({"n_a": 1, "n_b": 2, "bonds": [[0, 1, 1]], "u": 1, "kappa": 1})
    basis = build_basis(spec.sites, 0, 0)
    vec = np.ones(1, dtype=complex)
    for _ in range(2):
        vec, basis = apply_pair_creation(spec, "B", vec, basis)
    assert np.linalg.norm(vec) > 0
    vec, basis = apply_pair_creation(spec, "B", vec, basis)
    assert np.allclose(vec, 0)


def test_a_and_b_orthogonal(ring_spec):
    assert abs(np.vdot(state_a(ring_spec).amplitudes, state_b(ring_spec).amplitudes)) <= 1e-14


@pytest.mark.parametrize("name", ["fig2-a1", "fig2-a2", "fig3"])
def test_commutators_and_lie_algebra(name):
    spec = validate_spec({"geometry_name": name, "u": 1.7, "kappa": 1})
    res = commutator_residuals(spec, sector_basis(spec))
    assert len(res) == 4
    assert max(res.values()) <= 1e-12


def test_lie_algebra_at_edges(ring_spec):
    # empty and full sectors exercise the zero-dimensional companion bases
    for n in (0, ring_spec.sites):
        b = build_basis(ring_spec.sites, n, n)
        for side in ("A", "B"):
            assert build_eta(ring_spec, b, side).lie_residual() == 0


def test_minus_is_adjoint(ring_spec):
    b = sector_basis(ring_spec, 1, 1)
    ladder = build_eta(ring_spec, b, "B")
    lower = build_eta(ring_spec, ladder.above, "B")
    assert np.allclose(lower.minus.toarray(), adjoint(ladder.plus).toarray())


def test_wrong_side(ring_spec):
    with pytest.raises(DomainError):
        build_eta(ring_spec, sector_basis(ring_spec), "C")


def test_pair_correlation_examples(ring_spec):
    vac = pair_state(ring_spec, 0, 0)
    assert np.allclose(pair_correlation(vac, ring_spec), 0)
    two = pair_correlation(pair_state(ring_spec, 0, 2), ring_spec)
    off = two[~np.eye(4, dtype=bool)]
    assert np.allclose(off, 1 / 3, atol=1e-14)
    assert np.allclose(np.diag(two), 0.5)
    assert odlro_expected(4, 2) == pytest.approx(1 / 3)
    full = pair_correlation(pair_state(ring_spec, 0, 4), ring_spec)
    assert np.allclose(full, np.eye(4))


def test_pair_correlation_zero_norm(ring_spec):
    b = sector_basis(ring_spec)
    with pytest.raises(DomainError):
        pair_correlation(np.zeros(b.dim), ring_spec, b)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pair_correlation_psd(seed):
    spec = validate_spec({"geometry_name": "fig2-a1", "u": 3.0, "kappa": 1})
    b = sector_basis(spec)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    c = pair_correlation(v / np.linalg.norm(v), spec, b)
    assert np.allclose(c, c.conj().T, atol=1e-14)
    d = np.diag(c)
    assert np.all(np.abs(d.imag) < 1e-14) and np.all((d.real > -1e-12) & (d.real < 1 + 1e-12))
    assert np.linalg.eigvalsh(c).min() >= -1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_h_ab_kills_empty_a(seed):
    spec = validate_spec({"geometry_name": "fig2-a1", "u": 3.0, "kappa": 1})
    b = sector_basis(spec)
    rng = np.random.default_rng(seed)
    v = rng.normal(size=b.dim) + 1j * rng.normal(size=b.dim)
    v[a_particle_number(spec, b) > 0] = 0
    assert np.all(build_h_ab(spec, b) @ v == 0)
