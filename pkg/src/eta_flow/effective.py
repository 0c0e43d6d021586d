"""Doublon-subspace effective Hamiltonians and the collective Jordan block.

In the large-U shell every site is either empty or doubly occupied.  A
doublon configuration is a bitmask over the global sites; its state is
``prod_s c+_{s,up} c+_{s,dn} |Vac>``.  Pair operators on distinct sites
commute, so the product order carries no sign.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from math import comb, factorial, sqrt

import numpy as np
import scipy.sparse as sp
import sympy

from .errors import DomainError
from .fock import FockBasis, FockState, SparseOperator, apply_string, cdag, diagonal, UP, DOWN
from .model import LatticeSpec

EP_TOL = 1e-10


class EffectiveModelWarning(UserWarning):
    """The doublon picture assumes U much larger than the B hoppings."""


class DoublonBasis:
    """Doublon configurations with ``doublons`` set bits, or all of them when None."""

    def __init__(self, sites: int, doublons: int | None = None):
        if not 0 <= sites <= 24:
            raise DomainError(f"doublon basis supports up to 24 sites, got {sites}")
        if doublons is not None and not 0 <= doublons <= sites:
            raise DomainError(f"doublon number must lie in [0, {sites}], got {doublons}")
        self.sites = sites
        self.doublons = doublons
        if doublons is None:
            masks = np.arange(1 << sites, dtype=np.uint64)
        else:
            masks = np.array(sorted(sum(1 << i for i in c)
                                    for c in itertools.combinations(range(sites), doublons)),
                             dtype=np.uint64)
        self.configurations = masks
        self.configurations.setflags(write=False)

    @property
    def dim(self) -> int:
        return len(self.configurations)

    def __len__(self):
        return self.dim

    @property
    def key(self):
        return ("doublon", self.sites, self.doublons)

    def __eq__(self, other):
        return isinstance(other, DoublonBasis) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"DoublonBasis(sites={self.sites}, doublons={self.doublons}, dim={self.dim})"

    def locate(self, masks) -> np.ndarray:
        masks = np.asarray(masks, dtype=np.uint64)
        i = np.minimum(np.searchsorted(self.configurations, masks), self.dim - 1)
        return np.where(self.configurations[i] == masks, i, -1)

    def index(self, sites) -> int:
        mask = sum(1 << s for s in sites)
        i = int(self.locate([mask])[0])
        if i < 0:
            raise DomainError(f"configuration {sorted(sites)} not in {self!r}")
        return i

    def vector(self, sites) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(sites)] = 1
        return v

    def occupation(self, site: int) -> np.ndarray:
        return ((self.configurations >> np.uint64(site)) & np.uint64(1)).astype(float)


def doublon_basis(spec: LatticeSpec, doublons: int | None = -1) -> DoublonBasis:
    """Doublon basis on the spec's lattice; the default ``-1`` picks D = n_a."""
    return DoublonBasis(spec.sites, spec.n_a if doublons == -1 else doublons)


def _hop(dbasis: DoublonBasis, src: int, dst: int, amplitude: float):
    """Entries of ``amplitude * d+_dst d_src``."""
    occ = dbasis.configurations
    bit_s, bit_d = np.uint64(1 << src), np.uint64(1 << dst)
    ok = ((occ & bit_s) != 0) & ((occ & bit_d) == 0)
    cols = np.nonzero(ok)[0]
    rows = dbasis.locate(occ[cols] ^ bit_s ^ bit_d)
    return rows, cols, np.full(len(cols), amplitude, dtype=complex)


def _assemble(dbasis, pieces, diag) -> SparseOperator:
    rows = [p[0] for p in pieces] + [np.arange(dbasis.dim)]
    cols = [p[1] for p in pieces] + [np.arange(dbasis.dim)]
    vals = [p[2] for p in pieces] + [np.asarray(diag, dtype=complex)]
    m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(dbasis.dim, dbasis.dim))
    return SparseOperator(dbasis, m.tocsr())


def _check(spec, dbasis):
    if dbasis.sites != spec.sites:
        raise DomainError(f"doublon basis has {dbasis.sites} sites, spec needs {spec.sites}")
    if spec.u == 0:
        raise DomainError("the doublon effective model needs U != 0")
    if abs(spec.u) < 5 * spec.max_hopping:
        warnings.warn(f"U={spec.u} is below 5*max|J|={5 * spec.max_hopping:g}; "
                      "the doublon effective model is outside its validity range",
                      EffectiveModelWarning, stacklevel=3)


def h_a_eff(spec: LatticeSpec, dbasis: DoublonBasis) -> SparseOperator:
    diag = spec.u * sum(dbasis.occupation(i) for i in spec.a_sites)
    return _assemble(dbasis, [], diag)


def h_b_eff(spec: LatticeSpec, dbasis: DoublonBasis) -> SparseOperator:
    """Pseudo-spin Heisenberg model, one ``-4J^2/U (eta_i.eta_j - 1/4)`` per bond."""
    u = spec.u
    diag = u * sum(dbasis.occupation(g) for g in spec.b_sites)
    pieces = []
    for i, j, t in spec.bonds:
        gi, gj = spec.b_site(i), spec.b_site(j)
        coupling = -4 * t * t / u
        # eta+_i eta-_j carries beta_i beta_j; the 1/2 comes from eta_x eta_x + eta_y eta_y
        amp = coupling * 0.5 * spec.beta[i] * spec.beta[j]
        pieces.append(_hop(dbasis, gj, gi, amp))
        pieces.append(_hop(dbasis, gi, gj, amp))
        zi = dbasis.occupation(gi) - 0.5
        zj = dbasis.occupation(gj) - 0.5
        diag = diag + coupling * (zi * zj - 0.25)
    return _assemble(dbasis, pieces, diag)


def h_ab_eff(spec: LatticeSpec, dbasis: DoublonBasis) -> SparseOperator:
    """``(4 kappa^2/U) sum_i d+_{B(i)} d_{A,i}``: unidirectional doublon transfer."""
    amp = 4 * spec.kappa**2 / spec.u
    pieces = [_hop(dbasis, spec.a_site(i), spec.partner(i), amp) for i in spec.a_sites]
    return _assemble(dbasis, pieces, np.zeros(dbasis.dim))


def h_ab_prime_eff(spec: LatticeSpec, dbasis: DoublonBasis, lam: float | None = None) -> SparseOperator:
    """Second-order transfer term with both tunneling directions.

    Per coupled pair ``l``: forward doublon transfer ``4 kappa^2/U``, backward
    ``4 lam^2/U`` and a shift ``-(8 lam kappa/U)(eta^z_A eta^z_B - 1/4)``.
    """
    lam = spec.lam if lam is None else float(lam)
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    u, k = spec.u, spec.kappa
    pieces = []
    diag = np.zeros(dbasis.dim)
    for i in spec.a_sites:
        a, b = spec.a_site(i), spec.partner(i)
        pieces.append(_hop(dbasis, a, b, 4 * k * k / u))
        if lam:
            pieces.append(_hop(dbasis, b, a, 4 * lam * lam / u))
            za = dbasis.occupation(a) - 0.5
            zb = dbasis.occupation(b) - 0.5
            diag = diag - 8 / u * lam * k * (za * zb - 0.25)
    return _assemble(dbasis, pieces, diag)


def build_h_eff(spec: LatticeSpec, dbasis: DoublonBasis) -> SparseOperator:
    _check(spec, dbasis)
    m = h_a_eff(spec, dbasis).matrix + h_b_eff(spec, dbasis).matrix + h_ab_eff(spec, dbasis).matrix
    return SparseOperator(dbasis, m)


def build_h_prime_eff(spec: LatticeSpec, dbasis: DoublonBasis, lam: float | None = None) -> SparseOperator:
    _check(spec, dbasis)
    m = (h_a_eff(spec, dbasis).matrix + h_b_eff(spec, dbasis).matrix
         + h_ab_prime_eff(spec, dbasis, lam).matrix)
    return SparseOperator(dbasis, m)


def build_h_ab_prime_eff(spec: LatticeSpec, dbasis: DoublonBasis, lam: float | None = None) -> SparseOperator:
    return h_ab_prime_eff(spec, dbasis, lam)


def eta_z_total(dbasis: DoublonBasis) -> SparseOperator:
    return diagonal(dbasis, sum(dbasis.occupation(s) - 0.5 for s in range(dbasis.sites)))


def embedding(dbasis: DoublonBasis, fock: FockBasis) -> sp.csr_matrix:
    """Isometry (fock.dim x dbasis.dim) placing each doublon configuration in ``fock``."""
    if dbasis.doublons is None or fock.sector != (dbasis.doublons, dbasis.doublons):
        raise DomainError("embedding needs a fixed doublon number matching the Fock sector")
    rows = []
    signs = []
    vac = FockState(0, 0, fock.sites)
    for mask in dbasis.configurations:
        sites = [s for s in range(dbasis.sites) if (int(mask) >> s) & 1]
        factors = []
        for s in sites:
            factors += [cdag(s, UP), cdag(s, DOWN)]
        state, sign = apply_string(vac, factors)
        rows.append(fock.index(state))
        signs.append(sign)
    return sp.csr_matrix((np.array(signs, dtype=complex), (rows, np.arange(dbasis.dim))),
                         shape=(fock.dim, dbasis.dim))


# Collective sector |n>_A |N_a - n>_B, ordered n = N_a, ..., 0.

def subdiagonal(n_a: int, n_b: int, kappa: float, u: float) -> np.ndarray:
    """Entries M[k+1, k], k = 0..n_a-1, i.e. n = n_a-1-k A-pairs in the bra."""
    out = []
    for k in range(n_a):
        n = n_a - 1 - k
        out.append(4 * kappa**2 / u * (n_a - n) / n_b * sqrt((n + 1) * (n_b - n_a + n + 1)))
    return np.array(out)


@dataclass(frozen=True)
class CollectiveSector:
    n_a: int
    n_b: int
    kappa: float
    u: float
    m_matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.n_a + 1

    @property
    def labels(self) -> list[str]:
        return [f"|{n}>_A|{self.n_a - n}>_B" for n in range(self.n_a, -1, -1)]

    @property
    def eigenvalue(self) -> float:
        return self.n_a * self.u

    def nilpotent_part(self) -> np.ndarray:
        return self.m_matrix - self.eigenvalue * np.eye(self.dim)


def collective_matrix(n_a: int, n_b: int, kappa: float, u: float) -> CollectiveSector:
    if not 1 <= n_a <= n_b:
        raise DomainError(f"collective sector needs 1 <= n_a <= n_b, got n_a={n_a}, n_b={n_b}")
    if u == 0:
        raise DomainError("collective matrix needs U != 0")
    m = np.diag(np.full(n_a + 1, n_a * u, dtype=complex))
    m[np.arange(1, n_a + 1), np.arange(n_a)] = subdiagonal(n_a, n_b, kappa, u)
    return CollectiveSector(n_a, n_b, float(kappa), float(u), m)


def collective_matrix_exact(n_a: int, n_b: int, kappa, u) -> sympy.Matrix:
    """Same matrix in exact arithmetic (rational kappa, U; exact square roots)."""
    kappa, u = sympy.nsimplify(kappa), sympy.nsimplify(u)
    m = sympy.eye(n_a + 1) * n_a * u
    for k in range(n_a):
        n = n_a - 1 - k
        m[k + 1, k] = 4 * kappa**2 / u * sympy.Rational(n_a - n, n_b) * sympy.sqrt((n + 1) * (n_b - n_a + n + 1))
    return m


def nilpotency_exact(n_a: int, n_b: int, kappa, u) -> dict:
    """Exact powers of ``M - N_a U I``: the (N_a+1)-th vanishes, the N_a-th does not."""
    m = collective_matrix_exact(n_a, n_b, kappa, u)
    nil = m - sympy.eye(n_a + 1) * n_a * sympy.nsimplify(u)
    top = nil ** (n_a + 1)
    below = nil ** n_a
    nonzero = [(i, j, below[i, j]) for i in range(n_a + 1) for j in range(n_a + 1) if below[i, j] != 0]
    return {"power_n_a_plus_1_is_zero": top.is_zero_matrix, "power_n_a_nonzero": nonzero}


@dataclass(frozen=True)
class EPOrder:
    order: int | None
    jordan_index: int
    geometric_multiplicity: int
    residuals: tuple[float, ...]

    @property
    def nilpotent(self) -> bool:
        return self.order is not None


def _rank(a: np.ndarray, scale: float) -> int:
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    return int(np.sum(s > 1e-9 * max(scale, 1.0)))


def ep_order(matrix, shift: complex, tol: float = EP_TOL) -> EPOrder:
    """Nilpotency order of ``matrix - shift*I`` plus Jordan data at ``shift``.

    ``order`` is the smallest k with ``||(A - sI)^k||_F <= tol ||A||_F^k``, or
    None when no k <= dim qualifies.  ``jordan_index`` is where the ranks of
    the powers stop falling (the longest chain at ``shift``) and the geometric
    multiplicity is ``dim - rank(A - sI)``.
    """
    if isinstance(matrix, sympy.MatrixBase):
        return _ep_order_exact(matrix, sympy.nsimplify(shift))
    a = np.asarray(getattr(matrix, "toarray", lambda: matrix)(), dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"ep_order needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    base = np.linalg.norm(a)
    nil = a - shift * np.eye(n)
    power = np.eye(n, dtype=complex)
    residuals = []
    ranks = [n]
    order = None
    for k in range(1, n + 1):
        power = power @ nil
        residuals.append(float(np.linalg.norm(power)))
        ranks.append(_rank(power, base**k))
        if residuals[-1] <= tol * base**k:
            order = k
            break
    if order is not None:
        index = order
    else:
        index = next((k for k in range(1, n) if ranks[k] == ranks[k + 1]), n)
    return EPOrder(order, index, n - ranks[1], tuple(residuals))


def _ep_order_exact(m: sympy.Matrix, shift) -> EPOrder:
    n = m.shape[0]
    nil = m - shift * sympy.eye(n)
    power = sympy.eye(n)
    ranks = [n]
    order = None
    for k in range(1, n + 1):
        power = (power * nil).applyfunc(sympy.simplify)
        ranks.append(power.rank())
        if power.is_zero_matrix:
            order = k
            break
    index = order if order is not None else next(
        (k - 1 for k in range(1, len(ranks)) if ranks[k] == ranks[k - 1]), n)
    return EPOrder(order, index, n - ranks[1], ())


def jordan_index(matrix, eigenvalue: complex) -> int:
    """Length of the longest Jordan chain at ``eigenvalue`` (rank stabilization)."""
    return ep_order(matrix, eigenvalue).jordan_index


def falling(n: int, q: int) -> int:
    return factorial(n) // factorial(n - q)


@dataclass(frozen=True)
class AnalyticEvolution:
    t: np.ndarray
    amplitudes: np.ndarray  # shape (len(t), n_a+1), common phase exp(-i N_a U t) removed
    norm: np.ndarray
    fidelity: np.ndarray


def analytic_evolution(sector: CollectiveSector, t) -> AnalyticEvolution:
    """Closed-form evolution of ``|A>`` inside the collective sector."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise DomainError("analytic evolution needs t >= 0")
    n_a, n_b = sector.n_a, sector.n_b
    x = -4j * sector.kappa**2 * t / (sector.u * n_b)
    amps = np.empty((len(t), n_a + 1), dtype=complex)
    for q in range(n_a + 1):
        amps[:, q] = sqrt(falling(n_a, q) * falling(n_b, q)) * x**q
    norm = np.sqrt(np.sum(np.abs(amps) ** 2, axis=1))
    return AnalyticEvolution(t, amps, norm, np.abs(amps[:, -1]) / norm)


def collective_vectors(spec: LatticeSpec, dbasis: DoublonBasis) -> np.ndarray:
    """Columns |n>_A |N_a - n>_B (n = N_a .. 0) as doublon-basis vectors."""
    from .eta import pair_state

    fock = FockBasis(spec.sites, dbasis.doublons, dbasis.doublons)
    emb = embedding(dbasis, fock)
    cols = []
    for n in range(spec.n_a, -1, -1):
        ps = pair_state(spec, n, spec.n_a - n)
        cols.append(emb.conj().T @ ps.amplitudes)
    return np.column_stack(cols)


def projected_collective_matrix(spec: LatticeSpec) -> np.ndarray:
    """``<row| H_eff |col>`` over the pair states, by direct contraction."""
    dbasis = doublon_basis(spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EffectiveModelWarning)
        h = build_h_eff(spec, dbasis).matrix
    vecs = collective_vectors(spec, dbasis)
    return vecs.conj().T @ (h @ vecs)
