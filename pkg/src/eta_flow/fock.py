"""Bit-packed fermionic Fock bases and sparse second-quantized operators.

Modes are ordered globally as all spin-up modes by site index, followed by
all spin-down modes.  A creation or annihilation operator acting on mode
``k`` picks up the sign ``(-1)**(number of occupied modes before k)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError

UP, DOWN = 0, 1
MAX_SITES = 63


@dataclass(frozen=True)
class Mode:
    """Elementary operator: creation (``dagger``) or annihilation on one mode."""

    site: int
    spin: int
    dagger: bool

    def __str__(self):
        arrow = "up" if self.spin == UP else "dn"
        return f"c{'+' if self.dagger else ''}_{self.site}{arrow}"


def cdag(site: int, spin: int) -> Mode:
    return Mode(site, spin, True)


def cann(site: int, spin: int) -> Mode:
    return Mode(site, spin, False)


def number(site: int, spin: int) -> tuple[Mode, Mode]:
    return (cdag(site, spin), cann(site, spin))


@dataclass(frozen=True)
class Term:
    """``coefficient * factors[0] factors[1] ... factors[-1]``; the last factor acts first."""

    coefficient: complex
    factors: tuple[Mode, ...]

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    def charge(self) -> tuple[int, int]:
        d = [0, 0]
        for f in self.factors:
            d[f.spin] += 1 if f.dagger else -1
        return d[0], d[1]

    def __str__(self):
        return f"{self.coefficient} " + " ".join(str(f) for f in self.factors)


@dataclass(frozen=True)
class FockState:
    up_bits: int
    down_bits: int
    sites: int

    def __post_init__(self):
        limit = 1 << self.sites
        if not (0 <= self.up_bits < limit and 0 <= self.down_bits < limit):
            raise DomainError(f"occupation bits exceed {self.sites} sites")

    @property
    def n_up(self) -> int:
        return self.up_bits.bit_count()

    @property
    def n_down(self) -> int:
        return self.down_bits.bit_count()

    def occupied(self, site: int, spin: int) -> bool:
        bits = self.up_bits if spin == UP else self.down_bits
        return bool((bits >> site) & 1)

    def __str__(self):
        chars = []
        for i in range(self.sites):
            u, d = self.occupied(i, UP), self.occupied(i, DOWN)
            chars.append("2" if u and d else "u" if u else "d" if d else "0")
        return "|" + "".join(chars) + ">"


def _masks(sites: int, count: int) -> np.ndarray:
    out = [sum(1 << i for i in c) for c in itertools.combinations(range(sites), count)]
    return np.array(sorted(out), dtype=np.uint64)


def _check_counts(sites, n_up, n_down):
    for name, value in (("sites", sites), ("n_up", n_up), ("n_down", n_down)):
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
            raise DomainError(f"{name} must be an integer, got {value!r}")
    if not 0 <= sites <= MAX_SITES:
        raise DomainError(f"sites must lie in [0, {MAX_SITES}], got {sites}")
    if not 0 <= n_up <= sites:
        raise DomainError(f"n_up must lie in [0, {sites}], got {n_up}")
    if not 0 <= n_down <= sites:
        raise DomainError(f"n_down must lie in [0, {sites}], got {n_down}")


class FockBasis:
    """All configurations with fixed ``(n_up, n_down)`` on ``sites`` sites.

    States are ordered lexicographically on ``(up_bits, down_bits)``, so the
    ordinal of a state is ``rank(up_bits) * n_down_configs + rank(down_bits)``.
    """

    def __init__(self, sites: int, n_up: int, n_down: int):
        _check_counts(sites, n_up, n_down)
        self.sites = int(sites)
        self.n_up = int(n_up)
        self.n_down = int(n_down)
        self._up_masks = _masks(self.sites, self.n_up)
        self._down_masks = _masks(self.sites, self.n_down)
        nd = len(self._down_masks)
        self.up = np.repeat(self._up_masks, nd)
        self.down = np.tile(self._down_masks, len(self._up_masks))
        self.up.setflags(write=False)
        self.down.setflags(write=False)

    @property
    def sector(self) -> tuple[int, int]:
        return (self.n_up, self.n_down)

    @property
    def dim(self) -> int:
        return len(self.up)

    def __len__(self):
        return self.dim

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.sites, self.n_up, self.n_down)

    def __eq__(self, other):
        return isinstance(other, FockBasis) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"FockBasis(sites={self.sites}, n_up={self.n_up}, n_down={self.n_down}, dim={self.dim})"

    def state(self, i: int) -> FockState:
        return FockState(int(self.up[i]), int(self.down[i]), self.sites)

    @property
    def states(self) -> list[FockState]:
        return [self.state(i) for i in range(self.dim)]

    def locate(self, up: np.ndarray, down: np.ndarray) -> np.ndarray:
        """Vectorized ordinal lookup; -1 where the configuration is not in the basis."""
        up = np.asarray(up, dtype=np.uint64)
        down = np.asarray(down, dtype=np.uint64)
        iu = np.searchsorted(self._up_masks, up)
        idn = np.searchsorted(self._down_masks, down)
        iu_c = np.minimum(iu, len(self._up_masks) - 1)
        id_c = np.minimum(idn, len(self._down_masks) - 1)
        ok = (self._up_masks[iu_c] == up) & (self._down_masks[id_c] == down)
        return np.where(ok, iu_c * len(self._down_masks) + id_c, -1)

    def index(self, state: FockState) -> int:
        if state.sites != self.sites:
            raise DomainError("state belongs to a different lattice size")
        i = int(self.locate(np.array([state.up_bits]), np.array([state.down_bits]))[0])
        if i < 0:
            raise DomainError(f"{state} is not in sector {self.sector}")
        return i

    def vector(self, state: FockState, amplitude: complex = 1.0) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(state)] = amplitude
        return v

    def shifted(self, d_up: int, d_down: int) -> FockBasis | None:
        """Companion basis with shifted particle numbers, or None if empty."""
        n_up, n_down = self.n_up + d_up, self.n_down + d_down
        if not (0 <= n_up <= self.sites and 0 <= n_down <= self.sites):
            return None
        return FockBasis(self.sites, n_up, n_down)


def build_basis(sites: int, n_up: int, n_down: int) -> FockBasis:
    return FockBasis(sites, n_up, n_down)


def sector_dim(sites: int, n_up: int, n_down: int) -> int:
    return comb(sites, n_up) * comb(sites, n_down)


def _mode_bit(op: Mode, sites: int):
    if not 0 <= op.site < sites:
        raise DomainError(f"site {op.site} out of range for {sites} sites")
    if op.spin not in (UP, DOWN):
        raise DomainError(f"spin must be UP (0) or DOWN (1), got {op.spin!r}")
    return 1 << op.site


def apply_op(state: FockState, op: Mode) -> tuple[FockState, int] | None:
    """Apply one creation/annihilation operator; None when Pauli-blocked."""
    bit = _mode_bit(op, state.sites)
    up, down = state.up_bits, state.down_bits
    if op.spin == UP:
        occupied = bool(up & bit)
        preceding = (up & (bit - 1)).bit_count()
    else:
        occupied = bool(down & bit)
        preceding = up.bit_count() + (down & (bit - 1)).bit_count()
    if occupied == op.dagger:
        return None
    if op.spin == UP:
        up ^= bit
    else:
        down ^= bit
    return FockState(up, down, state.sites), (-1) ** preceding


def apply_string(state: FockState, factors: Sequence[Mode]) -> tuple[FockState, int] | None:
    sign = 1
    for op in reversed(factors):
        res = apply_op(state, op)
        if res is None:
            return None
        state, s = res
        sign *= s
    return state, sign


def _apply_vectorized(up, down, sign, alive, op: Mode, sites: int):
    bit = np.uint64(_mode_bit(op, sites))
    below = bit - np.uint64(1)
    if op.spin == UP:
        occ = (up & bit) != 0
        preceding = np.bitwise_count(up & below)
    else:
        occ = (down & bit) != 0
        preceding = np.bitwise_count(up) + np.bitwise_count(down & below)
    alive &= occ != op.dagger
    sign *= np.where(preceding & 1, -1, 1).astype(np.int8)
    if op.spin == UP:
        up ^= bit
    else:
        down ^= bit


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Complex sparse matrix mapping vectors on ``basis`` to vectors on ``target``.

    ``target`` equals ``basis`` for in-sector operators.
    """

    basis: FockBasis
    matrix: sp.csr_matrix
    target: FockBasis = field(default=None)

    def __post_init__(self):
        if self.target is None:
            object.__setattr__(self, "target", self.basis)
        m = sp.csr_matrix(self.matrix, dtype=complex)
        m.sum_duplicates()
        m.eliminate_zeros()
        if m.shape != (self.target.dim, self.basis.dim):
            raise DomainError(f"matrix shape {m.shape} does not match bases "
                              f"({self.target.dim}, {self.basis.dim})")
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def is_square(self) -> bool:
        return self.basis == self.target

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def entries(self) -> dict[tuple[int, int], complex]:
        coo = self.matrix.tocoo()
        return {(int(r), int(c)): complex(v) for r, c, v in zip(coo.row, coo.col, coo.data)}

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def dot(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return mul(self, other)
        return self.matrix @ other

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(-1, other))

    def __neg__(self):
        return scale(-1, self)

    def __mul__(self, c):
        return scale(c, self)

    __rmul__ = __mul__

    @property
    def H(self) -> SparseOperator:
        return adjoint(self)


def assemble(terms: Iterable[Term], basis: FockBasis, target: FockBasis | None = None) -> SparseOperator:
    """Matrix of ``sum(terms)`` from ``basis`` into ``target`` (default: ``basis``)."""
    target = basis if target is None else target
    if target.sites != basis.sites:
        raise DomainError("basis and target live on different lattices")
    want = (target.n_up - basis.n_up, target.n_down - basis.n_down)
    rows, cols, vals = [], [], []
    col_index = np.arange(basis.dim)
    for term in terms:
        if term.charge() != want:
            raise DomainError(f"term '{term}' changes (n_up, n_down) by {term.charge()}, "
                              f"sector map requires {want}")
        if term.coefficient == 0:
            continue
        up = basis.up.copy()
        down = basis.down.copy()
        sign = np.ones(basis.dim, dtype=np.int8)
        alive = np.ones(basis.dim, dtype=bool)
        for op in reversed(term.factors):
            _apply_vectorized(up, down, sign, alive, op, basis.sites)
        if not alive.any():
            continue
        r = target.locate(up[alive], down[alive])
        rows.append(r)
        cols.append(col_index[alive])
        vals.append(term.coefficient * sign[alive])
    if rows:
        data = np.concatenate(vals).astype(complex)
        m = sp.coo_matrix((data, (np.concatenate(rows), np.concatenate(cols))),
                          shape=(target.dim, basis.dim))
    else:
        m = sp.csr_matrix((target.dim, basis.dim), dtype=complex)
    return SparseOperator(basis, m.tocsr(), target)


def _same_maps(x: SparseOperator, y: SparseOperator):
    if x.basis != y.basis or x.target != y.target:
        raise DomainError(f"basis mismatch: {x.basis!r}->{x.target!r} vs {y.basis!r}->{y.target!r}")


def add(x: SparseOperator, y: SparseOperator) -> SparseOperator:
    _same_maps(x, y)
    return SparseOperator(x.basis, x.matrix + y.matrix, x.target)


def scale(c: complex, x: SparseOperator) -> SparseOperator:
    return SparseOperator(x.basis, x.matrix * c, x.target)


def mul(x: SparseOperator, y: SparseOperator) -> SparseOperator:
    """Product ``x @ y``; ``y`` acts first."""
    if y.target != x.basis:
        raise DomainError(f"basis mismatch: cannot compose {x.basis!r} with output {y.target!r}")
    return SparseOperator(y.basis, x.matrix @ y.matrix, x.target)


def adjoint(x: SparseOperator) -> SparseOperator:
    return SparseOperator(x.target, x.matrix.conj().T.tocsr(), x.basis)


def commutator(x: SparseOperator, y: SparseOperator) -> SparseOperator:
    _same_maps(x, y)
    if not x.is_square:
        raise DomainError("commutator requires in-sector operators")
    return add(mul(x, y), scale(-1, mul(y, x)))


def frobenius_norm(x: SparseOperator) -> float:
    return float(np.sqrt(np.sum(np.abs(x.matrix.data) ** 2)))


def identity(basis: FockBasis) -> SparseOperator:
    return SparseOperator(basis, sp.identity(basis.dim, dtype=complex, format="csr"))


def zero(basis: FockBasis, target: FockBasis | None = None) -> SparseOperator:
    target = basis if target is None else target
    return SparseOperator(basis, sp.csr_matrix((target.dim, basis.dim), dtype=complex), target)


def diagonal(basis: FockBasis, values: np.ndarray) -> SparseOperator:
    return SparseOperator(basis, sp.diags(np.asarray(values, dtype=complex), format="csr"))


def site_occupation(basis: FockBasis, site: int, spin: int) -> np.ndarray:
    bits = basis.up if spin == UP else basis.down
    return ((bits >> np.uint64(site)) & np.uint64(1)).astype(float)


def number_operator(basis: FockBasis, spin: int, sites: Iterable[int] | None = None) -> SparseOperator:
    sites = range(basis.sites) if sites is None else sites
    total = np.zeros(basis.dim)
    for s in sites:
        total += site_occupation(basis, s, spin)
    return diagonal(basis, total)


def hermiticity_deviation(x: SparseOperator) -> float:
    return frobenius_norm(add(x, scale(-1, adjoint(x))))
