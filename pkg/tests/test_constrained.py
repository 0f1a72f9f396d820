import math

import numpy as np
import pytest

from semiclab.bogoliubov import GeneratorPath, integrate_flow
from semiclab.constrained import (
    ComposedFockState,
    IsotropicPlane,
    QuadSpec,
    composed_inner,
    decay_profile,
    evolve_plane,
    inner_constrained,
    inner_constrained_detailed,
    invariance_check,
    make_plane,
    regularized_inner,
)
from semiclab.fock import (
    FockVector,
    ModeBasis,
    QuadraticGenerator,
    number_state,
    vacuum_state,
)


def squeeze_path(kappa=0.3, t_max=4.0):
    return GeneratorPath.constant(
        QuadraticGenerator.from_blocks(hpp=[[kappa]]), t_max)


def rotation_path(omega=0.7, t_max=4.0):
    return GeneratorPath.constant(
        QuadraticGenerator.from_blocks(hpm=[[omega]]), t_max)


def random_low_state(basis, rng, max_total):
    c = rng.normal(size=basis.size) + 1j * rng.normal(size=basis.size)
    c[basis.totals > max_total] = 0
    c /= np.linalg.norm(c)
    return FockVector(basis, c)


def test_constrained_vector_wrapper():
    from semiclab.constrained import ConstrainedVector

    basis = ModeBasis(1, 12)
    plane = make_plane([np.array([1.0])])
    cv = ConstrainedVector(vacuum_state(basis), plane)
    assert cv.plane.k == 1
    with pytest.raises(ValueError):
        ConstrainedVector(vacuum_state(ModeBasis(2, 4)), plane)


def test_displacement_vector_type():
    from semiclab.fock import DisplacementVector

    dv = DisplacementVector([0.3 + 0.1j])
    assert dv.modes == 1
    assert dv.norm() == pytest.approx(abs(0.3 + 0.1j))
    with pytest.raises(ValueError):
        DisplacementVector([float("inf")])


def test_make_plane_accepts_real_vectors():
    plane = make_plane([np.array([1.0, 0.5]), np.array([0.0, 2.0])])
    assert plane.k == 2


def test_make_plane_rejects_imaginary_gram():
    with pytest.raises(ValueError):
        make_plane([np.array([1.0]), np.array([1j])])


def test_make_plane_rejects_dependent():
    with pytest.raises(ValueError):
        make_plane([np.array([1.0, 0.0]), np.array([2.0, 0.0])])


def test_vacuum_inner_analytic():
    # k=1, d=1, B = b: integral of exp(-beta^2 b^2 / 2) = sqrt(2 pi) / b
    basis = ModeBasis(1, 32)
    for b in (1.0, 1.7):
        plane = make_plane([np.array([b])])
        val = inner_constrained(vacuum_state(basis), vacuum_state(basis), plane,
                                QuadSpec(pad=12, order=48))
        assert abs(val - math.sqrt(2 * math.pi) / b) < 1e-8


def test_single_quantum_is_null():
    # <1| U[beta] |1> = (1 - beta^2) e^(-beta^2/2) integrates to zero
    basis = ModeBasis(1, 48)
    plane = make_plane([np.array([1.0])])
    psi = number_state(basis, (1,))
    val = inner_constrained(psi, psi, plane, QuadSpec(pad=14, order=64))
    assert abs(val) < 1e-8


def test_integrand_decay_bound():
    rng = np.random.default_rng(3)
    basis = ModeBasis(1, 20)
    plane = make_plane([np.array([1.0])])
    y1 = random_low_state(basis, rng, 6)
    y2 = random_low_state(basis, rng, 6)
    prof = decay_profile(y1, y2, plane, m=4)
    assert prof.worst_ratio <= 1.0 + 1e-9
    assert prof.suggested_radius[0] > 0


def test_decay_profile_vacuum_any_exponent():
    basis = ModeBasis(1, 24)
    plane = make_plane([np.array([1.0])])
    v = vacuum_state(basis)
    for m in (0, 2, 6):
        prof = decay_profile(v, v, plane, m=m)
        assert prof.worst_ratio <= 1.0 + 1e-9


def test_decay_profile_m0_is_norm_product():
    rng = np.random.default_rng(9)
    basis = ModeBasis(1, 16)
    plane = make_plane([np.array([1.0])])
    y1 = random_low_state(basis, rng, 5)
    y2 = random_low_state(basis, rng, 5)
    prof = decay_profile(y1, y2, plane, m=0)
    assert prof.constant == pytest.approx(y1.norm() * y2.norm())


def test_regularized_positivity_and_convergence():
    # exact values sqrt(2 pi / (1 + 2 eps)) converge monotonically from below
    basis = ModeBasis(1, 32)
    plane = make_plane([np.array([1.0])])
    v = vacuum_state(basis)
    target = math.sqrt(2 * math.pi)
    vals = [regularized_inner(v, plane, eps, QuadSpec(order=64, pad=12))
            for eps in (1.0, 0.1, 0.01)]
    assert all(val >= -1e-10 for val in vals)
    for val, eps in zip(vals, (1.0, 0.1, 0.01)):
        assert val == pytest.approx(math.sqrt(2 * math.pi / (1 + 2 * eps)), abs=1e-8)
    errs = [abs(val - target) for val in vals]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-1


def test_regularized_hermite_cross_check():
    basis = ModeBasis(1, 32)
    plane = make_plane([np.array([1.0])])
    v = vacuum_state(basis)
    spec = QuadSpec(order=64, pad=12)
    a = regularized_inner(v, plane, 1.0, spec, method="legendre")
    b = regularized_inner(v, plane, 1.0, spec, method="hermite")
    assert abs(a - b) < 1e-8
    with pytest.raises(ValueError):
        regularized_inner(v, plane, 1e-4, spec, method="hermite")


def test_positivity_random_vectors():
    # self-pairings of grade-n states decay only like e^(-b^2/2) L_n(b^2),
    # so the displacement family needs headroom ~ (b* + sqrt(n))^2 quanta
    # for the integrand to be faithful down to the tail target
    rng = np.random.default_rng(17)
    basis = ModeBasis(1, 24)
    plane = make_plane([np.array([1.0])])
    spec = QuadSpec(pad=140, order=64)
    for _ in range(100):
        y = random_low_state(basis, rng, 6)
        val = inner_constrained(y, y, plane, spec)
        assert val.real >= -1e-10
        assert abs(val.imag) < 1e-10


def test_positivity_two_axis_plane():
    # grade <= 1 states keep the two-axis displacement family affordable;
    # their pairings still decay below 1e-10 inside the padded trust region
    rng = np.random.default_rng(23)
    basis = ModeBasis(2, 4)
    plane = make_plane([np.array([1.0, 0.2]), np.array([0.1, -0.8])])
    spec = QuadSpec(pad=40, order=40, self_check=1e-7)
    for _ in range(6):
        y = random_low_state(basis, rng, 1)
        val = inner_constrained(y, y, plane, spec)
        assert val.real >= -1e-8
        assert abs(val.imag) < 1e-8 * max(1.0, abs(val.real))


def test_null_vector_cauchy_schwarz_propagation():
    # if <Y, Y> ~ 0 then |<Y, Y'>| <= sqrt(<Y,Y><Y',Y'>) + tolerance
    rng = np.random.default_rng(31)
    basis = ModeBasis(1, 48)
    plane = make_plane([np.array([1.0])])
    null = number_state(basis, (1,))
    spec = QuadSpec(pad=14, order=64)
    nn = inner_constrained(null, null, plane, spec).real
    assert abs(nn) < 1e-8
    for _ in range(5):
        other = random_low_state(basis, rng, 8)
        cross = inner_constrained(null, other, plane, spec)
        oo = inner_constrained(other, other, plane, spec).real
        assert abs(cross) <= math.sqrt(max(nn, 0.0) * oo) + 1e-6


def test_basis_change_invariance_scaling():
    # k = 1: rescaling B with the matching measure constant is exact
    basis = ModeBasis(1, 24)
    v = vacuum_state(basis)
    base = inner_constrained(v, v, make_plane([np.array([1.0])]),
                             QuadSpec(pad=14, order=48))
    scaled = inner_constrained(v, v, make_plane([np.array([1.6])], a=1.6),
                               QuadSpec(pad=14, order=48))
    assert abs(base - scaled) < 1e-8 * abs(base)


def test_basis_change_invariance_mixing():
    # k = 2 real mixing: value unchanged once the measure constant absorbs
    # |det T|; vacuum fibers keep the displacement family affordable
    basis = ModeBasis(2, 4)
    v = vacuum_state(basis)
    b1 = np.array([1.0, 0.3])
    b2 = np.array([-0.2, 0.9])
    th = 0.6
    t = np.array([[np.cos(th), np.sin(th)], [-np.sin(th), np.cos(th)]]) @ np.diag(
        [1.1, 0.9])
    c1, c2 = t[0, 0] * b1 + t[0, 1] * b2, t[1, 0] * b1 + t[1, 1] * b2
    spec = QuadSpec(pad=30, order=48, self_check=1e-7)
    base = inner_constrained(v, v, make_plane([b1, b2]), spec)
    changed = inner_constrained(
        v, v, make_plane([c1, c2], a=abs(np.linalg.det(t))), spec)
    assert abs(base - changed) < 1e-6 * max(1, abs(base))


def test_evolve_plane_identity_and_rotation():
    from semiclab.bogoliubov import BogoliubovFlow

    plane = make_plane([np.array([1.0])])
    same = evolve_plane(plane, BogoliubovFlow.identity(1))
    assert np.allclose(same.bs[0], plane.bs[0])
    omega, t = 0.7, 0.9
    flow = integrate_flow(rotation_path(omega), t=t, dt=1e-3)
    rotated = evolve_plane(plane, flow)
    assert np.allclose(rotated.bs[0], np.exp(-1j * omega * t), atol=1e-9)


def test_evolve_plane_squeeze_keeps_isotropy():
    # d = 1 squeeze on a real constraint vector
    flow = integrate_flow(squeeze_path(0.4), t=1.2, dt=1e-3)
    plane = make_plane([np.array([1.0])])
    evolved = evolve_plane(plane, flow)
    g = evolved.gram()
    assert float(np.max(np.abs(g.imag))) <= 1e-10


def test_invariance_check_t0():
    basis = ModeBasis(1, 24)
    plane = make_plane([np.array([1.0])])
    res = invariance_check(vacuum_state(basis), plane, squeeze_path(0.3), t=0.0,
                           quad=QuadSpec(pad=14, order=56))
    assert res < 1e-12


def test_invariance_squeeze_vacuum():
    basis = ModeBasis(1, 24)
    plane = make_plane([np.array([1.0])])
    res = invariance_check(vacuum_state(basis), plane, squeeze_path(0.3), t=1.0,
                           quad=QuadSpec(pad=16, order=64))
    assert res < 1e-6


def test_invariance_rotation_random_state():
    rng = np.random.default_rng(47)
    basis = ModeBasis(1, 24)
    plane = make_plane([np.array([1.0])])
    y = random_low_state(basis, rng, 10)
    res = invariance_check(y, plane, rotation_path(0.9), t=1.3,
                           quad=QuadSpec(pad=14, order=64))
    assert res < 1e-6


def test_composed_inner_matches_pointwise():
    # trivial manifold of two copies: the composed value is just the weighted sum
    basis = ModeBasis(1, 24)
    v = vacuum_state(basis)
    alphas = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    constraints = np.tile(np.array([[1.0 + 0j]]), (8, 1, 1))
    state = ComposedFockState(
        alphas=alphas,
        density=np.ones(8),
        fibers=(v,) * 8,
        constraints=constraints,
        periodic_span=2 * np.pi,
    )
    val = composed_inner(state, state, QuadSpec(pad=12, order=48))
    expect = 2 * np.pi * math.sqrt(2 * math.pi)
    assert abs(val - expect) < 1e-6 * expect


def test_quadrature_certificate_record():
    basis = ModeBasis(1, 24)
    plane = make_plane([np.array([1.0])])
    val, cert = inner_constrained_detailed(
        vacuum_state(basis), vacuum_state(basis), plane, QuadSpec(pad=12, order=48))
    rec = cert.to_record()
    assert set(rec) >= {"box", "order", "value", "order_doubling_delta"}
    assert rec["order_doubling_delta"] < 1e-8


def _orbit_points():
    def s_of(a):
        return a / 2 - math.sin(2 * a) / 4

    def point(a):
        return np.array([s_of(a), math.cos(a), -math.sin(a)])

    return point


def _orbit_state(basis, n_alpha=12):
    from semiclab.scenarios import standard_phi

    point = _orbit_points()
    alphas = np.linspace(0, 2 * np.pi, n_alpha, endpoint=False)
    h = 1e-6
    constraints = np.empty((n_alpha, 1, 1), dtype=complex)
    for j, a in enumerate(alphas):
        dx = (point(a + h) - point(a - h)) / (2 * h)
        constraints[j, 0] = standard_phi(point(a), dx)
    return ComposedFockState(
        alphas=alphas,
        density=np.ones(n_alpha),
        fibers=(vacuum_state(basis),) * n_alpha,
        constraints=constraints,
        periodic_span=2 * np.pi,
    ), point


def test_composed_inner_orbit_matches_packet_fiber_value():
    # the same construction carried by the packet module's fiber integrals:
    # both sides evaluate to 2 pi * 2 sqrt(pi) for vacuum fibers
    basis = ModeBasis(1, 24)
    state, _ = _orbit_state(basis)
    val = composed_inner(state, state, QuadSpec(pad=12, order=48))
    exact = 2 * math.pi * 2 * math.sqrt(math.pi)
    assert abs(val - exact) < 1e-6 * exact


def test_transform_composed_rotation_preserves_inner():
    from scipy.linalg import expm

    from semiclab.constrained import transform_composed
    from semiclab.scenarios import standard_phi, su11_family

    fam = su11_family()
    basis = ModeBasis(1, 24)
    state, point = _orbit_state(basis, n_alpha=8)
    g = expm(0.7 * fam.algebra.rep[0])
    spec = QuadSpec(pad=12, order=48)
    before = composed_inner(state, state, spec)
    moved = transform_composed(state, fam, g, basis, point=point,
                               phi=standard_phi)
    after = composed_inner(moved, moved, spec)
    assert abs(after - before) < 1e-6 * abs(before)


def test_transform_composed_anomalous_family_still_isometric():
    # a constant scalar offset only shifts phases: norms and planes survive
    from scipy.linalg import expm

    from semiclab.constrained import transform_composed
    from semiclab.scenarios import standard_phi, su11_family

    fam = su11_family(central_offset=0.05)
    basis = ModeBasis(1, 24)
    state, point = _orbit_state(basis, n_alpha=8)
    g = expm(0.5 * fam.algebra.rep[0])
    spec = QuadSpec(pad=12, order=48)
    before = composed_inner(state, state, spec)
    moved = transform_composed(state, fam, g, basis, point=point,
                               phi=standard_phi)
    after = composed_inner(moved, moved, spec)
    assert abs(after - before) < 1e-6 * abs(before)


def test_transform_composed_identity():
    from semiclab.constrained import transform_composed
    from semiclab.scenarios import su11_family

    fam = su11_family()
    basis = ModeBasis(1, 16)
    state, point = _orbit_state(basis, n_alpha=6)
    moved = transform_composed(state, fam, np.eye(2), basis)
    for old, new in zip(state.fibers, moved.fibers):
        assert np.allclose(old.coeffs, new.coeffs, atol=1e-9)
    assert np.allclose(state.constraints, moved.constraints, atol=1e-9)
