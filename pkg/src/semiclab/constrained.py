"""Constrained Fock spaces over isotropic planes.

The inner product integrates displacement matrix elements over the plane:

    <Y1, Y2>_L = a * int dbeta  (Y1, U[sum_s beta_s B_s] Y2),

which converges because the integrand decays polynomially in |beta| (with
rate set by the weighted norms of Y1, Y2) and is nonnegative on the diagonal
whenever the plane is isotropic, Im(B_i, B_j) = 0.

Displacements along one plane direction commute with those along another on
an isotropic plane, so the quadrature engine factorizes U[beta] into
per-axis one-parameter unitary groups, each diagonalized once on a padded
basis.  The padding keeps the integrand trustworthy out to the box edge; the
vectors themselves stay at their own cutoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .bogoliubov import BogoliubovFlow, GeneratorPath, integrate_flow, propagate_direct
from .fock import FockVector, ModeBasis, displacement_eig, weighted_norm
from .quadrature import QuadCertificate, gauss_hermite_nodes, integrate_box

__all__ = [
    "IsotropicPlane",
    "ConstrainedVector",
    "QuadSpec",
    "ComposedFockState",
    "make_plane",
    "inner_constrained",
    "inner_constrained_detailed",
    "regularized_inner",
    "decay_profile",
    "DecayProfile",
    "evolve_plane",
    "invariance_check",
    "composed_inner",
    "transform_composed",
]


@dataclass(frozen=True)
class IsotropicPlane:
    """Real span of constraint vectors B_1..B_k with Im(B_i, B_j) = 0.

    ``a`` is the measure constant: dsigma = a dbeta_1 ... dbeta_k.
    """

    bs: tuple
    a: float = 1.0

    def __init__(self, bs: Sequence[np.ndarray], a: float = 1.0):
        vecs = tuple(np.asarray(b, dtype=complex).reshape(-1) for b in bs)
        object.__setattr__(self, "bs", vecs)
        object.__setattr__(self, "a", float(a))

    @property
    def k(self) -> int:
        return len(self.bs)

    @property
    def modes(self) -> int:
        return self.bs[0].size

    def gram(self) -> np.ndarray:
        mat = np.array([[np.vdot(bi, bj) for bj in self.bs] for bi in self.bs])
        return mat


def make_plane(bs: Sequence[np.ndarray], a: float = 1.0,
               isotropy_tol: float = 1e-12) -> IsotropicPlane:
    """Validate and build an isotropic plane.

    Rejects vectors whose pairwise inner products have nonzero imaginary
    part, and real-linearly dependent families.
    """
    if a <= 0:
        raise ValueError("measure constant must be positive")
    plane = IsotropicPlane(bs, a)
    if plane.k == 0:
        raise ValueError("need at least one constraint vector")
    g = plane.gram()
    worst = float(np.max(np.abs(g.imag)))
    if worst > isotropy_tol:
        raise ValueError(
            f"plane is not isotropic: max |Im(B_i, B_j)| = {worst:.3e}"
        )
    real_stack = np.array(
        [np.concatenate([b.real, b.imag]) for b in plane.bs]
    )
    sv = np.linalg.svd(real_stack, compute_uv=False)
    if sv.min() <= 1e-10 * max(1.0, sv.max()):
        raise ValueError("constraint vectors are linearly dependent over the reals")
    return plane


@dataclass(frozen=True)
class ConstrainedVector:
    """A representative of a constrained-space class: a Fock vector plus its plane."""

    representative: FockVector
    plane: IsotropicPlane

    def __post_init__(self):
        if self.plane.modes != self.representative.basis.modes:
            raise ValueError("plane and vector mode counts differ")
        k = self.plane.k
        required = k / 2 + 1
        if not np.isfinite(weighted_norm(self.representative, required)):
            raise ValueError("representative lacks the required weighted norm")


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature controls for plane integrals.

    ``radius``: per-axis half-width, or None to scan it from the integrand's
    decay; ``pad``: extra quanta for the displacement family so the integrand
    stays accurate out to the box edge; ``self_check``: order-doubling
    agreement requirement (None disables).
    """

    radius: Optional[Sequence[float]] = None
    order: int = 48
    pad: int = 12
    self_check: Optional[float] = 1e-8
    tail_target: float = 1e-12
    radius_cap: float = 40.0


class _DisplacementFamily:
    """Per-axis diagonalized displacements U[beta] = prod_s V_s e^(b_s lam_s) V_s+."""

    def __init__(self, plane: IsotropicPlane, basis: ModeBasis, pad: int):
        self.plane = plane
        self.big = basis.padded(pad)
        self.small = basis
        self.eigs = [displacement_eig(b, self.big) for b in plane.bs]
        self._w12 = None

    def axis_overlap(self) -> np.ndarray:
        """Cached V1+ V2 for the two-axis table path."""
        if self._w12 is None:
            self._w12 = self.eigs[0][1].conj().T @ self.eigs[1][1]
        return self._w12

    def embed(self, psi: FockVector) -> np.ndarray:
        out = np.zeros(self.big.size, dtype=complex)
        out[: psi.basis.size] = psi.coeffs
        return out

    def pairings(self, y1: FockVector, y2: FockVector, nodes: np.ndarray) -> np.ndarray:
        """(Y1, U[sum beta_s B_s] Y2) for each node row of beta values."""
        k = self.plane.k
        nodes = np.atleast_2d(nodes)
        if k == 1:
            lam, v = self.eigs[0]
            a = v.conj().T @ self.embed(y1)
            b = v.conj().T @ self.embed(y2)
            phases = np.exp(np.outer(nodes[:, 0], lam))
            return phases @ (np.conj(a) * b)
        # factorized product U_1(beta_1) ... U_k(beta_k); exact for commuting
        # axis generators, which isotropy guarantees
        left = self.embed(y1)
        right = self.embed(y2)
        if k == 2:
            lam1, v1 = self.eigs[0]
            lam2, v2 = self.eigs[1]
            w = self.axis_overlap()
            a = v1.conj().T @ left
            b = v2.conj().T @ right
            core = (np.conj(a)[:, None] * w) * b[None, :]
            b1 = np.unique(nodes[:, 0])
            b2 = np.unique(nodes[:, 1])
            e1 = np.exp(np.outer(b1, lam1))
            e2 = np.exp(np.outer(b2, lam2))
            table = e1 @ core @ e2.T
            i1 = np.searchsorted(b1, nodes[:, 0])
            i2 = np.searchsorted(b2, nodes[:, 1])
            return table[i1, i2]
        vals = np.empty(len(nodes), dtype=complex)
        for idx, beta in enumerate(nodes):
            vec = right
            for s in range(k - 1, -1, -1):
                lam, v = self.eigs[s]
                vec = v @ (np.exp(beta[s] * lam) * (v.conj().T @ vec))
            vals[idx] = np.vdot(left, vec)
        return vals

    def axis_envelope(self, y1: FockVector, y2: FockVector, axis: int,
                      radii: np.ndarray) -> np.ndarray:
        nodes = np.zeros((len(radii), self.plane.k))
        nodes[:, axis] = radii
        plus = np.abs(self.pairings(y1, y2, nodes))
        nodes[:, axis] = -radii
        minus = np.abs(self.pairings(y1, y2, nodes))
        return np.maximum(plus, minus)

    def trust_radius(self, axis: int) -> float:
        """Displacement reach the padded cutoff can still represent.

        A displacement by beta B shifts occupation up to roughly
        (beta ||B||)^2 / 2 extra quanta; beyond that the truncated
        integrand degenerates into cutoff artifacts.
        """
        return 0.8 * math.sqrt(2.0 * self.big.cutoff) / np.linalg.norm(
            self.plane.bs[axis])


_FAMILY_CACHE: dict = {}


def _get_family(plane: IsotropicPlane, basis: ModeBasis, pad: int) -> _DisplacementFamily:
    """Cache keyed on (constraint vectors, basis, pad).

    The family never looks at the measure constant, so planes differing
    only in ``a`` share an entry.
    """
    key = (
        tuple(b.tobytes() for b in plane.bs),
        basis.modes,
        basis.cutoff,
        pad,
    )
    fam = _FAMILY_CACHE.get(key)
    if fam is None:
        fam = _DisplacementFamily(plane, basis, pad)
        if len(_FAMILY_CACHE) >= 8:
            _FAMILY_CACHE.pop(next(iter(_FAMILY_CACHE)))
        _FAMILY_CACHE[key] = fam
    return fam


def _auto_radius(fam: _DisplacementFamily, y1: FockVector, y2: FockVector,
                 spec: QuadSpec) -> tuple:
    """Smallest per-axis radius past which the sampled envelope stays tiny.

    The truncated integrand is only faithful while it decays; past its
    floor it revives into cutoff artifacts.  The scan therefore stops at
    the envelope's global minimum and looks for the earliest radius from
    which the envelope stays below target up to that point.
    """
    scale = max(y1.norm() * y2.norm(), 1e-30)
    target = spec.tail_target * scale
    level_in = 1e-6 * scale
    level_rev = 1e-3 * scale
    radii = []
    for s in range(fam.plane.k):
        reach = min(spec.radius_cap, fam.trust_radius(s))
        grid = np.linspace(0.05, reach, 320)
        env = fam.axis_envelope(y1, y2, s, grid)
        # locate the first decay basin: entry point, then its floor before
        # the envelope revives into cutoff artifacts
        j_enter = None
        for j in range(len(grid) - 1):
            if env[j] < level_in and env[j + 1] < 10 * level_in:
                j_enter = j
                break
        if j_enter is None:
            radii.append(float(grid[int(np.argmin(env))]))
            continue
        j_rev = len(grid)
        for j in range(j_enter + 1, len(grid)):
            if env[j] > level_rev:
                j_rev = j
                break
        j_floor = j_enter + int(np.argmin(env[j_enter:j_rev]))
        chosen = grid[j_floor]
        for j in range(j_floor + 1):
            if env[j: j_floor + 1].max() <= target:
                chosen = min(1.15 * grid[j], grid[j_floor])
                break
        radii.append(float(chosen))
    if fam.plane.k > 1:
        # the integrand decays in |sum beta_s B_s|, whose level sets are
        # tilted ellipsoids when the Gram matrix has off-diagonal weight;
        # bound the level set reached on the axes by its enclosing box
        gram = fam.plane.gram().real
        level = max(
            r * math.sqrt(gram[s, s]) for s, r in enumerate(radii)
        )
        ginv_diag = np.diag(np.linalg.inv(gram))
        radii = [
            min(1.02 * level * math.sqrt(max(ginv_diag[s], 0.0)),
                fam.trust_radius(s))
            for s in range(fam.plane.k)
        ]
    return tuple(radii)


def inner_constrained_detailed(
    y1: FockVector,
    y2: FockVector,
    plane: IsotropicPlane,
    quad: QuadSpec = QuadSpec(),
) -> tuple[complex, QuadCertificate]:
    """Constrained inner product with its quadrature certificate."""
    if y1.basis != y2.basis:
        raise ValueError("vectors live on different bases")
    if plane.modes != y1.basis.modes:
        raise ValueError("plane mode count does not match the vectors")
    required = plane.k / 2 + 1
    for y in (y1, y2):
        if not np.isfinite(weighted_norm(y, required)):
            raise ValueError("weighted-norm precondition failed")
    fam = _get_family(plane, y1.basis, quad.pad)
    radius = quad.radius if quad.radius is not None else _auto_radius(fam, y1, y2, quad)
    radius = tuple(float(r) for r in np.atleast_1d(radius))
    if len(radius) != plane.k:
        raise ValueError("radius must give one half-width per plane direction")
    cert = integrate_box(
        lambda nodes: fam.pairings(y1, y2, nodes),
        radius,
        quad.order,
        self_check_tol=quad.self_check,
    )
    return plane.a * cert.value, cert


def inner_constrained(
    y1: FockVector,
    y2: FockVector,
    plane: IsotropicPlane,
    quad: QuadSpec = QuadSpec(),
) -> complex:
    value, _ = inner_constrained_detailed(y1, y2, plane, quad)
    return value


def regularized_inner(
    y: FockVector,
    plane: IsotropicPlane,
    eps: float,
    quad: QuadSpec = QuadSpec(),
    method: str = "legendre",
) -> float:
    """Gaussian-regularized self inner product; nonnegative on isotropic planes.

    The default folds the weight e^(-eps |beta|^2) into the integrand on the
    decay-sized Gauss-Legendre box, which is uniformly accurate in eps.  The
    Gauss-Hermite route serves as a cross-check; its nodes spread like
    1/sqrt(eps), so it is only offered while they stay inside the trust
    radius of the truncated displacement family.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    fam = _get_family(plane, y.basis, quad.pad)
    if method == "legendre":
        radius = quad.radius if quad.radius is not None else _auto_radius(
            fam, y, y, quad)
        radius = tuple(float(r) for r in np.atleast_1d(radius))
        cert = integrate_box(
            lambda nodes: np.exp(-eps * np.sum(np.atleast_2d(nodes) ** 2, axis=1))
            * fam.pairings(y, y, nodes),
            radius,
            quad.order,
            self_check_tol=quad.self_check,
        )
        value = plane.a * cert.value
    elif method == "hermite":
        nodes, weights = gauss_hermite_nodes(plane.k, eps, quad.order)
        live = np.abs(weights) > 1e-16 * np.abs(weights).max()
        nodes, weights = nodes[live], weights[live]
        for s in range(plane.k):
            reach = fam.trust_radius(s)
            if np.abs(nodes[:, s]).max() > reach:
                raise ValueError(
                    f"eps = {eps:g} spreads Gauss-Hermite nodes past the trust "
                    f"radius {reach:.2f}; use the legendre route"
                )
        vals = fam.pairings(y, y, nodes)
        value = plane.a * complex(np.sum(weights * vals))
    else:
        raise ValueError("method must be 'legendre' or 'hermite'")
    if abs(value.imag) > 1e-9 * max(1.0, abs(value)):
        raise RuntimeError(f"regularized inner product came out non-real: {value}")
    return float(value.real)


@dataclass(frozen=True)
class DecayProfile:
    constant: float
    exponent: float
    suggested_radius: tuple
    worst_ratio: float

    def bound(self, beta_norm: float) -> float:
        return self.constant / max(beta_norm, 1e-30) ** self.exponent


def decay_profile(
    y1: FockVector,
    y2: FockVector,
    plane: IsotropicPlane,
    m: int,
    quad: QuadSpec = QuadSpec(),
    n_samples: int = 160,
) -> DecayProfile:
    """Certify |(Y1, U[sum beta_s B_s] Y2)| <= C / |beta|^m on sampled rays.

    C combines the binomial weighted-norm bound with the smallest eigenvalue
    of the plane's real Gram matrix; a sampled violation signals a
    weighted-norm miscomputation and raises.
    """
    g_min = float(np.linalg.eigvalsh(plane.gram().real).min())
    if g_min <= 0:
        raise ValueError("degenerate plane")
    c = sum(
        math.comb(m, j) * weighted_norm(y1, j / 2) * weighted_norm(y2, (m - j) / 2)
        for j in range(m + 1)
    )
    c *= g_min ** (-m / 2)
    fam = _get_family(plane, y1.basis, quad.pad)
    k = plane.k
    rays = [np.eye(k)[s] for s in range(k)]
    if k > 1:
        rays.append(np.ones(k) / math.sqrt(k))
    worst = 0.0
    reach = min([quad.radius_cap] + [fam.trust_radius(s) for s in range(k)])
    radii = np.linspace(0.3, reach, n_samples)
    scale = max(y1.norm() * y2.norm(), 1e-30)
    target = quad.tail_target * scale
    suggested = [0.0] * k
    for ray in rays:
        nodes = radii[:, None] * ray[None, :]
        vals = np.abs(fam.pairings(y1, y2, nodes))
        ratios = vals * radii**m / c
        worst = max(worst, float(ratios.max()))
        if worst > 1 + 1e-9:
            raise RuntimeError(
                f"sampled decay violates the certified bound (ratio {worst:.3f}); "
                "weighted norms are inconsistent with the integrand"
            )
        for s in range(k):
            if ray[s] > 0:
                below = vals <= target
                good = next((radii[j] for j in range(len(radii)) if below[j:].all()),
                            radii[-1])
                suggested[s] = max(suggested[s], 1.15 * float(good) * ray[s])
    return DecayProfile(
        constant=float(c),
        exponent=float(m),
        suggested_radius=tuple(suggested),
        worst_ratio=worst,
    )


def evolve_plane(plane: IsotropicPlane, flow: BogoliubovFlow,
                 isotropy_tol: float = 1e-10) -> IsotropicPlane:
    """Transport the plane through a flow: B -> F conj(B) + conj(G) B.

    The measure constant rides along unchanged.
    """
    new_bs = [flow.f @ np.conj(b) + np.conj(flow.g) @ b for b in plane.bs]
    out = IsotropicPlane(new_bs, plane.a)
    g = out.gram()
    worst = float(np.max(np.abs(g.imag)))
    if worst > isotropy_tol:
        raise RuntimeError(f"evolved plane lost isotropy: {worst:.3e}")
    sv = np.linalg.svd(
        np.array([np.concatenate([b.real, b.imag]) for b in new_bs]),
        compute_uv=False,
    )
    if sv.min() <= 1e-10 * max(1.0, sv.max()):
        raise RuntimeError("evolved plane is numerically degenerate")
    return out


def invariance_check(
    y: FockVector,
    plane: IsotropicPlane,
    path: GeneratorPath,
    t: float,
    dt: float = 1e-3,
    quad: QuadSpec = QuadSpec(),
) -> float:
    """|<Psi_t, Psi_t>_(L_t) - <Y, Y>_L| for the evolved state and plane."""
    before, _ = inner_constrained_detailed(y, y, plane, quad)
    flow = integrate_flow(path, t, dt)
    psi_t = propagate_direct(y, path, t, dt).state
    plane_t = evolve_plane(plane, flow)
    after, _ = inner_constrained_detailed(psi_t, psi_t, plane_t, quad)
    return abs(after - before)


@dataclass(frozen=True)
class ComposedFockState:
    """Fibered state over an isotropic manifold grid.

    ``alphas``: (n,) parameter grid (single-parameter manifolds); ``density``:
    d(Sigma)/d(alpha) at the grid points; ``fibers``: representative vector per
    point; ``constraints``: (n, k, d) constraint vectors; ``periodic_span``:
    length of the parameter circle when the manifold closes.
    """

    alphas: np.ndarray
    density: np.ndarray
    fibers: tuple
    constraints: np.ndarray
    periodic_span: Optional[float] = None

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=float)
        density = np.asarray(self.density, dtype=float)
        constraints = np.asarray(self.constraints, dtype=complex)
        n = len(alphas)
        if density.shape != (n,) or len(self.fibers) != n:
            raise ValueError("grid, density and fibers must share one length")
        if constraints.ndim != 3 or constraints.shape[0] != n:
            raise ValueError("constraints must have shape (n, k, modes)")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "density", density)
        object.__setattr__(self, "constraints", constraints)
        for j in range(n):
            make_plane(list(constraints[j]), a=max(density[j], 1e-300))

    @property
    def k(self) -> int:
        return self.constraints.shape[1]

    def plane(self, j: int) -> IsotropicPlane:
        return IsotropicPlane(list(self.constraints[j]), a=float(self.density[j]))

    def quad_weights(self) -> np.ndarray:
        """Trapezoid weights on the alpha grid (periodic when the manifold closes)."""
        a = self.alphas
        if self.periodic_span is not None:
            h = self.periodic_span / len(a)
            return np.full(len(a), h)
        w = np.zeros(len(a))
        w[1:-1] = (a[2:] - a[:-2]) / 2
        w[0] = (a[1] - a[0]) / 2
        w[-1] = (a[-1] - a[-2]) / 2
        return w


def composed_inner(
    s1: ComposedFockState,
    s2: ComposedFockState,
    quad: QuadSpec = QuadSpec(),
) -> complex:
    """int dSigma <Z1(alpha), Z2(alpha)> over the shared manifold grid.

    The measure density enters twice, exactly as the coordinate-invariant
    construction demands: once in the base quadrature and once as each
    fiber plane's measure constant.
    """
    if not np.allclose(s1.alphas, s2.alphas):
        raise ValueError("composed states must share the manifold grid")
    if not np.allclose(s1.constraints, s2.constraints, atol=1e-10):
        raise ValueError("composed states must share constraint planes")
    weights = s1.quad_weights()
    total = 0.0 + 0.0j
    for j in range(len(s1.alphas)):
        val, _ = inner_constrained_detailed(
            s1.fibers[j], s2.fibers[j], s1.plane(j), quad)
        total += weights[j] * s1.density[j] * val
    return complex(total)


def transform_composed(
    state: ComposedFockState,
    fam,
    g,
    basis: ModeBasis,
    dt: float = 1e-3,
    subspace_tol: float = 1e-6,
    point: Optional[Callable[[float], np.ndarray]] = None,
    phi: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
) -> ComposedFockState:
    """Transport a composed state through a group element of a quadratic family.

    The manifold is mapped by the classical action, fibers by the group
    unitary, and the constraint planes are transported through the
    element's Bogoliubov flow.  When ``point``/``phi`` callables describing
    the manifold are supplied, the constraints are also recomputed from the
    transformed manifold and the two plane families are compared as real
    subspaces; a mismatch beyond ``subspace_tol`` signals an anomalous family.
    """
    from .symmetry import group_element_action

    n = len(state.alphas)
    new_fibers = []
    new_constraints = np.empty_like(state.constraints)
    for j in range(n):
        x0 = point(state.alphas[j]) if point is not None else None
        action = group_element_action(fam, g, x0, basis, dt=dt)
        psi = state.fibers[j]
        new_fibers.append(FockVector(basis, action.unitary @ psi.coeffs, psi.leakage))
        evolved = evolve_plane(state.plane(j), action.flow)
        for s, b in enumerate(evolved.bs):
            new_constraints[j, s] = b
        if point is not None and phi is not None:
            h = 1e-5
            x_plus = action.map_point(point(state.alphas[j] + h))
            x_minus = action.map_point(point(state.alphas[j] - h))
            dx = (np.asarray(x_plus) - np.asarray(x_minus)) / (2 * h)
            recomputed = np.atleast_2d(phi(action.map_point(x0), dx))
            dist = _real_span_distance(recomputed, np.atleast_2d(evolved.bs))
            if dist > subspace_tol:
                raise RuntimeError(
                    f"transported plane disagrees with the transformed manifold "
                    f"(subspace distance {dist:.3e}); the family is anomalous"
                )
    return ComposedFockState(
        alphas=state.alphas,
        density=state.density,
        fibers=tuple(new_fibers),
        constraints=new_constraints,
        periodic_span=state.periodic_span,
    )


def _real_span_distance(bs1: np.ndarray, bs2: np.ndarray) -> float:
    """Distance between real spans of complex vector families (projector gap)."""

    def projector(bs):
        stack = np.array([np.concatenate([b.real, b.imag]) for b in bs]).T
        q, _ = np.linalg.qr(stack)
        return q @ q.T

    return float(np.linalg.norm(projector(bs1) - projector(bs2), 2))
