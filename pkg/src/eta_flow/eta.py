"""Eta-pairing operators, pair states and pairing correlations.

Pair operators change the particle number by two, so they are stored as
rectangular maps between adjacent ``(n, n)`` sector bases.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import comb, factorial
from typing import Sequence

import numpy as np

from .errors import DomainError
from .fock import (DOWN, UP, FockBasis, FockState, SparseOperator, Term, add, adjoint,
                   apply_string, assemble, build_basis, cann, cdag, diagonal,
                   frobenius_norm, mul, scale, site_occupation, zero)
from .model import LatticeSpec, build_h_a, build_h_b

SIDES = ("A", "B")


def _side(spec: LatticeSpec, side: str) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if side == "A":
        return tuple(spec.a_sites), spec.alpha
    if side == "B":
        return tuple(spec.b_sites), spec.beta
    raise DomainError(f"side must be 'A' or 'B', got {side!r}")


def pair_creation(site: int, sign: int = 1) -> Term:
    return Term(sign, (cdag(site, UP), cdag(site, DOWN)))


def pair_annihilation(site: int, sign: int = 1) -> Term:
    return Term(sign, (cann(site, DOWN), cann(site, UP)))


def eta_z_values(basis: FockBasis, site: int) -> np.ndarray:
    return (site_occupation(basis, site, UP) + site_occupation(basis, site, DOWN) - 1) / 2


@dataclass(frozen=True, eq=False)
class EtaLadder:
    """Per-site pseudo-spin operators around one sector.

    ``raise_out[k]`` is eta+ on site ``sites[k]`` from ``basis`` up one pair;
    ``raise_in[k]`` maps the sector one pair below into ``basis``.  Lowering
    operators are their adjoints.
    """

    basis: FockBasis
    sites: tuple[int, ...]
    signs: tuple[int, ...]
    below: FockBasis | None
    above: FockBasis | None
    raise_in: tuple[SparseOperator, ...]
    raise_out: tuple[SparseOperator, ...]

    def plus_site(self, k: int) -> SparseOperator:
        return self.raise_out[k]

    def minus_site(self, k: int) -> SparseOperator:
        """eta- on site k from ``basis`` one pair down."""
        return adjoint(self.raise_in[k])

    @cached_property
    def plus(self) -> SparseOperator:
        return _total(self.raise_out)

    @cached_property
    def minus(self) -> SparseOperator:
        return adjoint(_total(self.raise_in))

    def z_site(self, k: int, basis: FockBasis | None = None) -> SparseOperator:
        basis = self.basis if basis is None else basis
        return diagonal(basis, eta_z_values(basis, self.sites[k]))

    def z(self, basis: FockBasis | None = None) -> SparseOperator:
        basis = self.basis if basis is None else basis
        return diagonal(basis, sum(eta_z_values(basis, s) for s in self.sites))

    def lie_residual(self) -> float:
        """Largest Frobenius violation of [eta+_i, eta-_j] = 2 eta^z_j d_ij and
        [eta^z_i, eta+_j] = eta+_j d_ij over all site pairs in ``basis``."""
        worst = 0.0
        n = len(self.sites)
        for i in range(n):
            for j in range(n):
                # in-sector products: eta+_i eta-_j passes through ``below``, eta-_j eta+_i through ``above``
                first = mul(self.raise_in[i], adjoint(self.raise_in[j]))
                second = mul(adjoint(self.raise_out[j]), self.raise_out[i])
                c = add(first, scale(-1, second))
                if i == j:
                    c = add(c, scale(-2, self.z_site(j)))
                worst = max(worst, frobenius_norm(c))
                if self.above is not None:
                    zi_up = self.z_site(i, self.above)
                    c = add(mul(zi_up, self.raise_out[j]),
                            scale(-1, mul(self.raise_out[j], self.z_site(i))))
                    if i == j:
                        c = add(c, scale(-1, self.raise_out[j]))
                    worst = max(worst, frobenius_norm(c))
        return worst


def _total(ops: Sequence[SparseOperator]) -> SparseOperator:
    out = ops[0]
    for op in ops[1:]:
        out = add(out, op)
    return out


class _EmptyBasis(FockBasis):
    """Zero-dimensional stand-in for an out-of-range companion sector."""

    def __init__(self, sites, label):
        self.sites = sites
        self.n_up = self.n_down = label
        self._up_masks = self._down_masks = np.zeros(0, dtype=np.uint64)
        self.up = self.down = np.zeros(0, dtype=np.uint64)


def _empty_basis(like: FockBasis) -> FockBasis:
    return _EmptyBasis(like.sites, -1)


def build_eta(spec: LatticeSpec, basis: FockBasis, side: str) -> EtaLadder:
    sites, signs = _side(spec, side)
    if basis.sites != spec.sites:
        raise DomainError(f"basis has {basis.sites} sites, spec needs {spec.sites}")
    below = basis.shifted(-1, -1)
    above = basis.shifted(1, 1)
    if below is None:
        raise_in = tuple(zero(_empty_basis(basis), basis) for _ in sites)
    else:
        raise_in = tuple(assemble([pair_creation(s, g)], below, basis) for s, g in zip(sites, signs))
    if above is None:
        raise_out = tuple(zero(basis, _empty_basis(basis)) for _ in sites)
    else:
        raise_out = tuple(assemble([pair_creation(s, g)], basis, above) for s, g in zip(sites, signs))
    return EtaLadder(basis, sites, signs, below, above, raise_in, raise_out)


def commutator_residuals(spec: LatticeSpec, basis: FockBasis) -> dict[str, float]:
    """Frobenius residuals of [H_A, eta_A+] = U eta_A+, [H_B, eta_B+] = U eta_B+
    and of the per-site pseudo-spin algebra on both sides, evaluated on ``basis``."""
    above = basis.shifted(1, 1)
    out = {}
    builders = {"A": build_h_a, "B": build_h_b}
    for side in SIDES:
        ladder = build_eta(spec, basis, side)
        if above is not None:
            h_in = builders[side](spec, basis)
            h_out = builders[side](spec, above)
            c = add(add(mul(h_out, ladder.plus), scale(-1, mul(ladder.plus, h_in))),
                    scale(-spec.u, ladder.plus))
            out[f"[H_{side}, eta_{side}+] - U eta_{side}+"] = frobenius_norm(c)
        out[f"pseudo-spin algebra {side}"] = ladder.lie_residual()
    return out


def omega(n_sites: int, pairs: int) -> int:
    return factorial(pairs) ** 2 * comb(n_sites, pairs)


@dataclass(frozen=True, eq=False)
class PairState:
    n_a_pairs: int
    n_b_pairs: int
    basis: FockBasis
    amplitudes: np.ndarray
    omega_a: int
    omega_b: int
    raw_norm_sq: float

    @property
    def label(self) -> str:
        return f"|{self.n_a_pairs}>_A|{self.n_b_pairs}>_B"


def apply_pair_creation(spec: LatticeSpec, side: str, vec: np.ndarray, basis: FockBasis):
    sites, signs = _side(spec, side)
    target = basis.shifted(1, 1)
    if target is None:
        raise DomainError("no room for another pair on this lattice")
    op = assemble([pair_creation(s, g) for s, g in zip(sites, signs)], basis, target)
    return op @ vec, target


def pair_state(spec: LatticeSpec, n: int, m: int) -> PairState:
    """Normalized ``(eta_A+)^n (eta_B+)^m |Vac>`` built by repeated application."""
    if not 0 <= n <= spec.n_a:
        raise DomainError(f"A-pair count must lie in [0, {spec.n_a}], got {n}")
    if not 0 <= m <= spec.n_b:
        raise DomainError(f"B-pair count must lie in [0, {spec.n_b}], got {m}")
    basis = build_basis(spec.sites, 0, 0)
    vec = np.ones(1, dtype=complex)
    for side, count in (("B", m), ("A", n)):
        for _ in range(count):
            vec, basis = apply_pair_creation(spec, side, vec, basis)
    norm_sq = float(np.vdot(vec, vec).real)
    return PairState(n, m, basis, vec / np.sqrt(norm_sq),
                     omega(spec.n_a, n), omega(spec.n_b, m), norm_sq)


def state_a(spec: LatticeSpec) -> PairState:
    """Filled source, empty Hubbard cluster: ``|N_a>_A |0>_B``."""
    return pair_state(spec, spec.n_a, 0)


def state_b(spec: LatticeSpec) -> PairState:
    """``|0>_A |N_a>_B``, the coalescing eigenstate of H."""
    return pair_state(spec, 0, spec.n_a)


def doublon_product(spec: LatticeSpec, sites: Sequence[int]) -> tuple[np.ndarray, FockBasis]:
    """``prod_sites c+_{s,up} c+_{s,dn} |Vac>`` on the matching sector basis."""
    sites = list(sites)
    if len(set(sites)) != len(sites):
        raise DomainError(f"doublon sites must be distinct, got {sites}")
    factors = []
    for s in sites:
        if not 0 <= s < spec.sites:
            raise DomainError(f"doublon site {s} out of range")
        factors += [cdag(s, UP), cdag(s, DOWN)]
    basis = build_basis(spec.sites, len(sites), len(sites))
    state, sign = apply_string(FockState(0, 0, spec.sites), factors)
    return basis.vector(state, sign), basis


def pair_correlation(state, spec: LatticeSpec, basis: FockBasis | None = None) -> np.ndarray:
    """Matrix ``<eta+_{B,i} eta_{B,j}>`` over B-sites for a state vector.

    ``state`` is a ``PairState`` or an amplitude vector on ``basis``; it is
    normalized before contracting.
    """
    if isinstance(state, PairState):
        vec, basis = state.amplitudes, state.basis
    else:
        vec = np.asarray(state, dtype=complex)
        if basis is None:
            raise DomainError("basis is required for a raw amplitude vector")
    norm_sq = float(np.vdot(vec, vec).real)
    if norm_sq == 0:
        raise DomainError("pair_correlation of a zero-norm state")
    b_sites = list(spec.b_sites)
    n = len(b_sites)
    out = np.zeros((n, n), dtype=complex)
    for i, gi in enumerate(b_sites):
        for j, gj in enumerate(b_sites):
            term = Term(spec.beta[i] * spec.beta[j],
                        (cdag(gi, UP), cdag(gi, DOWN), cann(gj, DOWN), cann(gj, UP)))
            op = assemble([term], basis)
            out[i, j] = np.vdot(vec, op @ vec) / norm_sq
    return out


def odlro_expected(n_sites: int, pairs: int) -> float:
    """Off-diagonal pair correlation of a normalized eta state with ``pairs`` pairs."""
    return pairs * (n_sites - pairs) / (n_sites * (n_sites - 1))
