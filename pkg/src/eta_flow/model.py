"""Composite lattice specification and the A/B/AB Hamiltonian builders.

Global site indexing puts the ``n_a`` source sites first, then the ``n_b``
Hubbard sites: A-site ``i`` is global site ``i`` and B-site ``j`` is global
site ``n_a + j``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, NotBipartiteError, UnsupportedParameterError
from .fock import (DOWN, UP, FockBasis, FockState, SparseOperator, Term, add, adjoint,
                   apply_string, assemble, cann, cdag, frobenius_norm, site_occupation)
from .fock import build_basis as _build_basis

SPINS = (UP, DOWN)

# Bond wiring is not legible from the published schematics; these are
# bipartite graphs carrying the published hopping values.
GEOMETRIES: dict[str, dict[str, Any]] = {
    "fig2-a1": {
        "n_a": 2,
        "n_b": 4,
        "bonds": [[0, 1, 0.75], [1, 2, 1.17], [2, 3, 0.68], [3, 0, 1.02]],
    },
    "fig2-a2": {
        "n_a": 3,
        "n_b": 6,
        "bonds": [[0, 1, 0.75], [1, 2, 1.17], [2, 3, 0.68], [3, 4, 1.02],
                  [4, 5, 0.87], [5, 0, 0.61], [0, 3, 0.72]],
    },
    "ring4-uniform": {
        "n_a": 2,
        "n_b": 4,
        "bonds": [[0, 1, 1.0], [1, 2, 1.0], [2, 3, 1.0], [3, 0, 1.0]],
    },
    "fig3": {
        "n_a": 3,
        "n_b": 4,
        "bonds": [[0, 1, 0.75], [1, 2, 1.17], [2, 3, 0.68], [3, 0, 1.02]],
    },
    "two-site": {"n_a": 1, "n_b": 1, "bonds": []},
}


@dataclass(frozen=True)
class LatticeSpec:
    n_a: int
    n_b: int
    bonds: tuple[tuple[int, int, float], ...]
    kappa: float
    u: float
    lam: float = 0.0
    alpha: tuple[int, ...] = ()
    beta: tuple[int, ...] = ()
    coupling: tuple[int, ...] = ()
    geometry_name: str | None = field(default=None, compare=False)

    @property
    def sites(self) -> int:
        return self.n_a + self.n_b

    def a_site(self, i: int) -> int:
        return i

    def b_site(self, j: int) -> int:
        return self.n_a + j

    def partner(self, i: int) -> int:
        """Global index of the B-site that A-site ``i`` tunnels into."""
        return self.b_site(self.coupling[i])

    @property
    def a_sites(self) -> range:
        return range(self.n_a)

    @property
    def b_sites(self) -> range:
        return range(self.n_a, self.sites)

    @property
    def max_hopping(self) -> float:
        return max((abs(j) for _, _, j in self.bonds), default=0.0)

    def to_document(self) -> dict[str, Any]:
        doc = {
            "n_a": self.n_a,
            "n_b": self.n_b,
            "bonds": [[i, j, t] for i, j, t in self.bonds],
            "kappa": self.kappa,
            "lambda": self.lam,
            "u": self.u,
            "alpha": list(self.alpha),
            "beta": list(self.beta),
            "coupling": list(self.coupling),
        }
        if self.geometry_name:
            doc["geometry_name"] = self.geometry_name
        return doc

    def replace(self, **changes) -> LatticeSpec:
        doc = self.to_document()
        for key, value in changes.items():
            doc["lambda" if key == "lam" else key] = value
        if "bonds" in changes and "beta" not in changes:
            doc.pop("beta")
        return validate_spec(doc)


def _two_coloring(n: int, bonds) -> list[int]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j, _ in bonds:
        adj[i].append(j)
        adj[j].append(i)
    color = [0] * n
    parent = [-1] * n
    depth = [-1] * n
    for root in range(n):
        if depth[root] >= 0:
            continue
        depth[root] = 0
        color[root] = 1
        queue = deque([root])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if depth[w] < 0:
                    depth[w] = depth[v] + 1
                    parent[w] = v
                    color[w] = -color[v]
                    queue.append(w)
                elif color[w] == color[v]:
                    raise NotBipartiteError(_odd_cycle(v, w, parent, depth))
    return color


def _odd_cycle(v, w, parent, depth):
    left, right = [v], [w]
    while depth[left[-1]] > depth[right[-1]]:
        left.append(parent[left[-1]])
    while depth[right[-1]] > depth[left[-1]]:
        right.append(parent[right[-1]])
    while left[-1] != right[-1]:
        left.append(parent[left[-1]])
        right.append(parent[right[-1]])
    return left + right[-2::-1] + [v]


def _as_int(raw, key):
    value = raw[key]
    if isinstance(value, bool) or not float(value).is_integer():
        raise DomainError(f"{key} must be an integer, got {value!r}")
    return int(value)


def _as_real(raw, key, default=None):
    value = raw.get(key, default)
    if value is None:
        raise DomainError(f"missing required field {key!r}")
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise DomainError(f"{key} must be a real number, got {value!r}") from None
    if not math.isfinite(value):
        raise DomainError(f"{key} must be finite, got {value!r}")
    return value


def _signs(raw, key, length):
    values = tuple(int(s) for s in raw[key])
    if len(values) != length:
        raise DomainError(f"{key} must have {length} entries, got {len(values)}")
    if any(s not in (1, -1) for s in values):
        raise DomainError(f"{key} entries must be +1 or -1")
    return values


def validate_spec(raw: Mapping[str, Any] | LatticeSpec) -> LatticeSpec:
    """Check a spec document and return the frozen ``LatticeSpec``.

    ``geometry_name`` fills ``n_a``, ``n_b`` and ``bonds`` from a named
    preset; explicit keys override it.  ``beta`` is derived by 2-coloring
    the bond graph when omitted, and ``alpha`` defaults to the ``beta`` sign
    of each A-site's tunneling partner.
    """
    if isinstance(raw, LatticeSpec):
        raw = raw.to_document()
    raw = dict(raw)
    name = raw.get("geometry_name")
    if name is not None:
        if name not in GEOMETRIES:
            raise DomainError(f"unknown geometry_name {name!r}; known: {sorted(GEOMETRIES)}")
        for key, value in GEOMETRIES[name].items():
            raw.setdefault(key, value)
    for key in ("n_a", "n_b", "u", "kappa"):
        if key not in raw:
            raise DomainError(f"missing required field {key!r}")
    n_a, n_b = _as_int(raw, "n_a"), _as_int(raw, "n_b")
    if n_a < 0 or n_b < 1:
        raise DomainError(f"need n_a >= 0 and n_b >= 1, got n_a={n_a}, n_b={n_b}")
    if n_a > n_b:
        raise DomainError(f"n_a={n_a} exceeds n_b={n_b}: each A-site needs its own B partner")
    if n_a + n_b > 63:
        raise DomainError("n_a + n_b exceeds the 63-site limit")

    bonds = []
    seen = set()
    for entry in raw.get("bonds", []):
        if len(entry) != 3:
            raise DomainError(f"bond {entry!r} must be [i, j, J]")
        i, j, t = entry
        if isinstance(t, complex):
            raise DomainError(f"bond {entry!r}: hopping must be real")
        i, j, t = int(i), int(j), float(t)
        if not (0 <= i < n_b and 0 <= j < n_b):
            raise DomainError(f"bond {entry!r}: B-site index out of range [0, {n_b})")
        if i == j:
            raise DomainError(f"bond {entry!r}: self bond")
        if frozenset((i, j)) in seen:
            raise DomainError(f"bond {entry!r}: duplicate bond")
        if not math.isfinite(t):
            raise DomainError(f"bond {entry!r}: hopping must be finite")
        seen.add(frozenset((i, j)))
        bonds.append((i, j, t))

    coloring = _two_coloring(n_b, bonds)
    if raw.get("beta"):
        beta = _signs(raw, "beta", n_b)
        for i, j, _ in bonds:
            if beta[i] * beta[j] != -1:
                raise DomainError(f"beta is not a 2-coloring: bond ({i}, {j}) joins equal signs")
    else:
        beta = tuple(coloring)

    if raw.get("coupling"):
        coupling = tuple(int(c) for c in raw["coupling"])
        if len(coupling) != n_a or len(set(coupling)) != n_a or not all(0 <= c < n_b for c in coupling):
            raise DomainError("coupling must map each A-site to a distinct B-site")
    else:
        coupling = tuple(range(n_a))

    alpha = _signs(raw, "alpha", n_a) if raw.get("alpha") else tuple(beta[c] for c in coupling)

    lam = _as_real(raw, "lambda", 0.0)
    if lam < 0:
        raise DomainError(f"lambda must be >= 0, got {lam}")
    return LatticeSpec(
        n_a=n_a, n_b=n_b, bonds=tuple(bonds),
        kappa=_as_real(raw, "kappa"), u=_as_real(raw, "u"), lam=lam,
        alpha=alpha, beta=beta, coupling=coupling, geometry_name=name,
    )


def sector_basis(spec: LatticeSpec, n_up: int | None = None, n_down: int | None = None) -> FockBasis:
    """Fock basis on all sites; defaults to the filled-A sector (n_a, n_a)."""
    n_up = spec.n_a if n_up is None else n_up
    n_down = n_up if n_down is None else n_down
    return _build_basis(spec.sites, n_up, n_down)


def _check_basis(spec, basis):
    if basis.sites != spec.sites:
        raise DomainError(f"basis has {basis.sites} sites, spec needs {spec.sites}")


def h_a_terms(spec: LatticeSpec) -> list[Term]:
    return [Term(spec.u / 2, (cdag(i, s), cann(i, s))) for i in spec.a_sites for s in SPINS]


def h_b_terms(spec: LatticeSpec) -> list[Term]:
    terms = []
    for i, j, t in spec.bonds:
        gi, gj = spec.b_site(i), spec.b_site(j)
        for s in SPINS:
            terms.append(Term(t, (cdag(gi, s), cann(gj, s))))
            terms.append(Term(t, (cdag(gj, s), cann(gi, s))))
    for g in spec.b_sites:
        terms.append(Term(spec.u, (cdag(g, UP), cdag(g, DOWN), cann(g, DOWN), cann(g, UP))))
    return terms


def h_ab_terms(spec: LatticeSpec) -> list[Term]:
    terms = []
    for i in spec.a_sites:
        b = spec.partner(i)
        for s in SPINS:
            terms.append(Term(spec.kappa, (cdag(b, s), cann(i, s))))
            if spec.lam:
                terms.append(Term(spec.lam, (cdag(i, s), cann(b, s))))
    return terms


def build_h_a(spec: LatticeSpec, basis: FockBasis) -> SparseOperator:
    _check_basis(spec, basis)
    return assemble(h_a_terms(spec), basis)


def build_h_b(spec: LatticeSpec, basis: FockBasis) -> SparseOperator:
    _check_basis(spec, basis)
    return assemble(h_b_terms(spec), basis)


def build_h_ab(spec: LatticeSpec, basis: FockBasis) -> SparseOperator:
    _check_basis(spec, basis)
    return assemble(h_ab_terms(spec), basis)


def build_full(spec: LatticeSpec, basis: FockBasis) -> SparseOperator:
    _check_basis(spec, basis)
    return add(add(build_h_a(spec, basis), build_h_b(spec, basis)), build_h_ab(spec, basis))


def a_particle_number(spec: LatticeSpec, basis: FockBasis) -> np.ndarray:
    total = np.zeros(basis.dim)
    for i in spec.a_sites:
        for s in SPINS:
            total += site_occupation(basis, i, s)
    return total


def hermitize_check(spec: LatticeSpec, basis: FockBasis) -> float:
    """Frobenius deviation from Hermiticity of ``S H'_AB S^-1``.

    ``S = (kappa/lam)**(N_A/2)`` with ``N_A`` the A-particle number; it turns
    both tunneling amplitudes into ``sqrt(kappa*lam)``.
    """
    if spec.lam <= 0:
        raise DomainError(f"hermitize_check needs lambda > 0, got {spec.lam}")
    if spec.kappa <= 0:
        raise DomainError(f"hermitize_check needs kappa > 0, got {spec.kappa}")
    h = build_h_ab(spec, basis)
    s = (spec.kappa / spec.lam) ** (a_particle_number(spec, basis) / 2)
    transformed = SparseOperator(basis, sp.diags(s) @ h.matrix @ sp.diags(1 / s))
    return frobenius_norm(add(transformed, -1 * adjoint(transformed)))


# Two-site system: one A-site, one B-site, basis |1>..|4> ordered as
#   |1> = a+_up a+_dn |0>, |2> = b+_up b+_dn |0>, |3> = a+_up b+_dn |0>, |4> = a+_dn b+_up |0>

def two_site_spec(u: float, kappa: float, lam: float = 0.0) -> LatticeSpec:
    return validate_spec({"n_a": 1, "n_b": 1, "bonds": [], "u": u, "kappa": kappa, "lambda": lam})


def two_site_vectors(basis: FockBasis) -> np.ndarray:
    """Columns are |1>..|4> expressed in the (1, 1) Fock basis of the two-site system."""
    if basis.key != (2, 1, 1):
        raise DomainError("two-site vectors live in the 2-site (1, 1) sector")
    a, b = 0, 1
    strings = [
        (cdag(a, UP), cdag(a, DOWN)),
        (cdag(b, UP), cdag(b, DOWN)),
        (cdag(a, UP), cdag(b, DOWN)),
        (cdag(a, DOWN), cdag(b, UP)),
    ]
    vac = FockState(0, 0, 2)
    cols = []
    for s in strings:
        state, sign = apply_string(vac, s)
        cols.append(basis.vector(state, sign))
    return np.column_stack(cols)


def two_site_matrix(u: float, kappa: float) -> np.ndarray:
    """The 4x4 matrix h in the |1>..|4> basis."""
    return np.array([
        [u, 0, 0, 0],
        [0, u, kappa, -kappa],
        [kappa, 0, u / 2, 0],
        [-kappa, 0, 0, u / 2],
    ], dtype=complex)


@dataclass(frozen=True)
class TwoSiteSolution:
    u: float
    kappa: float

    @property
    def h(self) -> np.ndarray:
        return two_site_matrix(self.u, self.kappa)

    @property
    def phi_a(self) -> np.ndarray:
        r = 2 * self.kappa / self.u
        return np.array([1, 0, r, -r], dtype=complex)

    @property
    def phi_c(self) -> np.ndarray:
        return np.array([0, 1, 0, 0], dtype=complex)

    def lam_factor(self, t: float) -> complex:
        return 1 - np.exp(1j * t * self.u / 2)

    def propagator(self, t: float) -> np.ndarray:
        u, k = self.u, self.kappa
        lam = self.lam_factor(t)
        half = np.exp(1j * t * u / 2)
        r = 2 * k / u * lam
        m = np.array([
            [1, 0, 0, 0],
            [-4j * t * k**2 / u - 8 * k**2 / u**2 * lam, 1, r, -r],
            [r, 0, half, 0],
            [-r, 0, 0, half],
        ], dtype=complex)
        return np.exp(-1j * t * u) * m

    def amp_2(self, t):
        """<2|Psi(t)> for the initial A-doublon |1>."""
        u, k = self.u, self.kappa
        t = np.asarray(t, dtype=float)
        return -np.exp(-1j * t * u) * 4 * k**2 / u * (1j * t + 2 / u * (1 - np.exp(1j * t * u / 2)))

    def amp_2_large_u(self, t):
        t = np.asarray(t, dtype=float)
        return -np.exp(-1j * t * self.u) * 4 * self.kappa**2 / self.u * (1j * t)


def two_site_solution(u: float, kappa: float) -> TwoSiteSolution:
    if u == 0:
        raise UnsupportedParameterError(
            "u = 0 is unsupported: h then carries a 3x3 Jordan block and the closed form divides by u")
    return TwoSiteSolution(float(u), float(kappa))
