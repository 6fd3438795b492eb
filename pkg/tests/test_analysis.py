import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heterodg.analysis import (EnergyAccumulator, ErrorRecord, FrontNotFoundError, dg_norm, energy_from_series,
                               error_norms, estimate_wave_speed, evaluate_at, fit_rates, fit_speed, format_records,
                               front_position, l2_norm, locate_points, read_records, write_records)
from heterodg.dgspace import DgSpace
from heterodg.forms import assemble_stiffness, compute_penalty
from heterodg.manufactured import arctan_front
from heterodg.mesh import DIRICHLET, NEUMANN, PolyMesh
from heterodg.meshgen import generate_voronoi_mesh, structured_quad_mesh
from heterodg.timestep import StatePair


def eye_field(x, t=0.0):
    return np.broadcast_to(np.eye(2), np.shape(x)[:-1] + (2, 2)).copy()


def zero_grad(x, t=0.0):
    return np.zeros(np.shape(x))


def two_squares(tag=NEUMANN):
    v = np.array([[0, 0], [1, 0], [2, 0], [2, 1], [1, 1], [0, 1]], float)
    return PolyMesh(v, ([0, 1, 4, 5], [1, 2, 3, 4]), default_tag=tag)


def test_norms_of_zero_and_constants():
    V = DgSpace(generate_voronoi_mesh(n_elements=10, seed=1, lloyd_iters=10), 2)
    pen = compute_penalty(V, eye_field, 1.0, 1.0, 1.0)
    z = np.zeros(V.n_dofs)
    assert l2_norm(V, z) == 0 and dg_norm(V, z, eye_field, pen) == 0
    one = V.l2_project(lambda x, t: np.ones(x.shape[:-1]))
    assert l2_norm(V, one) == pytest.approx(1.0, rel=1e-12)
    assert dg_norm(V, one, eye_field, pen) < 1e-12


def test_dg_norm_of_linear_field_is_its_gradient_part():
    V = DgSpace(two_squares(), 1)
    pen = compute_penalty(V, eye_field, 1.0, 1.0, 1.0)
    u = V.l2_project(lambda x, t: x[..., 0])
    # |grad x|^2 integrated over a domain of area 2, no jumps
    assert dg_norm(V, u, eye_field, pen) == pytest.approx(math.sqrt(2.0), rel=1e-12)


def test_dg_norm_matches_stiffness_quadratic_form():
    # for the SIPG form, u^T A u = |u|_DG^2 - 2 ({D grad u}, [[u]])
    m = generate_voronoi_mesh(n_elements=15, seed=2, lloyd_iters=10, boundary_tag=DIRICHLET)
    V = DgSpace(m, 2)
    pen = compute_penalty(V, eye_field, 1.0, 1.0, 1.0)
    rng = np.random.default_rng(0)
    u = rng.normal(size=V.n_dofs)
    from heterodg.forms import stiffness_parts
    vol, penalty_part, _ = stiffness_parts(V, eye_field, pen)
    expected = u @ (vol @ u) + u @ (penalty_part @ u)
    assert dg_norm(V, u, eye_field, pen) ** 2 == pytest.approx(expected, rel=1e-10)


def test_error_norms_basic_cases():
    V = DgSpace(structured_quad_mesh(2, 2), 2)
    pen = compute_penalty(V, eye_field, 1.0, 1.0, 1.0)
    ones = lambda x, t=0.0: np.ones(np.shape(x)[:-1])
    nv = error_norms(V, np.zeros(V.n_dofs), ones, zero_grad, eye_field, pen)
    assert nv.l2 == pytest.approx(1.0, rel=1e-13)
    poly = lambda x, t=0.0: x[..., 0] ** 2 - 3 * x[..., 0] * x[..., 1]
    grad = lambda x, t=0.0: np.stack([2 * x[..., 0] - 3 * x[..., 1], -3 * x[..., 0]], axis=-1)
    nv = error_norms(V, V.l2_project(poly), poly, grad, eye_field, pen)
    assert nv.l2 < 1e-10 and nv.dg < 1e-9
    assert nv.triple >= nv.dg >= 0


def test_dirichlet_jump_uses_boundary_datum():
    V = DgSpace(structured_quad_mesh(1, 1, boundary_tag=DIRICHLET), 0)
    pen = compute_penalty(V, eye_field, 1.0, 1.0, 1.0)
    ones = lambda x, t=0.0: np.ones(np.shape(x)[:-1])
    u = V.l2_project(ones)
    # the exact field is 1, so u_h - g vanishes; against g = 0 the jump is the full trace
    assert error_norms(V, u, ones, zero_grad, eye_field, pen).dg < 1e-12
    zero = lambda x, t=0.0: np.zeros(np.shape(x)[:-1])
    nv = error_norms(V, u, ones, zero_grad, eye_field, pen, g_D=zero)
    assert nv.dg == pytest.approx(math.sqrt(pen.face_gamma.sum()), rel=1e-12)


def test_energy_rule():
    assert energy_from_series([0.0, 0.5, 1.0], [0.5] * 3, [0.5] * 3) == pytest.approx(math.sqrt(1.5))
    assert energy_from_series([0.0, 1.0], [0, 0], [0, 0]) == 0.0
    # at t = 0 only the L2 term is present
    assert energy_from_series([0.0], [0.7], [3.0]) == pytest.approx(math.sqrt(0.7))
    acc = EnergyAccumulator(None, None, None)
    with pytest.raises(ValueError):
        acc.value


def test_energy_accumulator_rejects_time_reversal():
    V = DgSpace(structured_quad_mesh(1, 1), 1)
    pen = compute_penalty(V, eye_field, 1.0, 1.0, 1.0)
    acc = EnergyAccumulator(V, eye_field, pen)
    z = np.zeros(V.n_dofs)
    acc(StatePair(z, z, 0.1, 1))
    with pytest.raises(ValueError):
        acc(StatePair(z, z, 0.1, 1))


def test_fit_rates_examples():
    assert fit_rates([1, 0.5], [1, 0.25]).least_squares == pytest.approx(2.0, abs=1e-14)
    h = np.array([0.3, 0.2, 0.1, 0.05])
    fit = fit_rates(h, 7 * h**3)
    assert fit.least_squares == pytest.approx(3.0, abs=1e-12)
    assert np.allclose(fit.pairwise, 3.0, atol=1e-12)
    for bad in ([1.0, 0.0], [1.0, -1.0]):
        with pytest.raises(ValueError):
            fit_rates([1.0, 0.5], bad)
    with pytest.raises(ValueError):
        fit_rates([1.0], [1.0])


def test_fit_rates_on_published_p1_data():
    h = [0.322736007494350, 0.181290869729279, 0.102590411249172, 0.056694075094424]
    e = [0.010095748022434, 0.004494085281393, 0.002088006049963, 9.60265754784e-04]
    fit = fit_rates(h, e)
    assert fit.least_squares == pytest.approx(1.35, abs=0.01)
    assert fit.pairwise[-1] == pytest.approx(1.3, abs=0.02)


@given(st.floats(0.5, 6), st.floats(1e-3, 1e3))
@settings(max_examples=50, deadline=None)
def test_fit_rates_recovers_power_laws(rate, const):
    h = np.geomspace(0.5, 0.02, 5)
    assert fit_rates(h, const * h**rate).least_squares == pytest.approx(rate, abs=1e-10)


def test_records_roundtrip_is_exact(tmp_path):
    recs = [ErrorRecord("spatial", 2, 300, 0.1 / 3, 1e-5, 1e-3, "c", 1 / 7, 2 / 7, math.pi * 1e-5, 3000)]
    path = tmp_path / "errors.csv"
    write_records(recs, path)
    assert path.read_text().splitlines()[0] == "test,p,n_el,h,dt,T,field,l2,dg,energy"
    back = read_records(path)
    assert back[0].h == recs[0].h and back[0].energy == recs[0].energy
    assert format_records(back) == format_records(recs)
    with pytest.raises(ValueError):
        ErrorRecord("x", 1, 1, 0.1, 0.1, 1.0, "c", -1.0, 0.0, 0.0)


def inside(poly, x):
    """Crossing-number test, independent of the package's sub-triangles."""
    c = False
    for (x1, y1), (x2, y2) in zip(poly, np.roll(poly, -1, axis=0)):
        if (y1 > x[1]) != (y2 > x[1]) and x[0] < x1 + (x[1] - y1) * (x2 - x1) / (y2 - y1):
            c = not c
    return c


def test_locate_and_evaluate():
    m = generate_voronoi_mesh(n_elements=20, seed=4, lloyd_iters=10)
    V = DgSpace(m, 2)
    pts = np.random.default_rng(1).uniform(0.01, 0.99, (50, 2))
    owners = locate_points(m, pts)
    for x, k in zip(pts, owners):
        assert inside(m.polygon(k), x)
    f = lambda x, t=0.0: 1 + x[..., 0] - 2 * x[..., 1] ** 2
    assert np.allclose(evaluate_at(V, V.l2_project(f), pts), f(pts), atol=1e-11)
    assert locate_points(m, np.array([[2.0, 2.0]]))[0] == -1
    assert np.isnan(evaluate_at(V, V.l2_project(f), [[2.0, 2.0]])[0])


def test_front_position_of_known_profiles():
    assert front_position(lambda x: x / 4, 0, 4, 0.5) == pytest.approx(2.0, abs=1e-9)
    assert front_position(lambda x: 0.5 - np.arctan(x - 1.3) / np.pi, 0, 5) == pytest.approx(1.3, abs=1e-9)
    with pytest.raises(FrontNotFoundError):
        front_position(lambda x: np.zeros_like(x), 0, 1)


def test_exact_travelling_front_speed():
    sol = arctan_front()
    times = np.arange(6.0)
    pos = []
    for t in times:
        pos.append(front_position(lambda xs: sol.q(np.column_stack([xs, np.full_like(xs, 0.5)]), t), 0, 5))
    trace = fit_speed(times, pos)
    assert trace.speed == pytest.approx(0.1, abs=1e-6)
    assert trace.band[0] <= trace.speed <= trace.band[1]


def test_stationary_profile_speed_zero():
    trace = fit_speed([0, 1, 2, 3], [1.2] * 4)
    assert trace.speed == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        fit_speed([0, 0, 1], [1, 1, 1])


def test_estimate_wave_speed_on_projected_front():
    m = generate_voronoi_mesh((0, 5, 0, 1), 200, seed=1, lloyd_iters=20)
    V = DgSpace(m, 3)
    sol = arctan_front()
    snaps = [(t, V.l2_project(sol.q, t)) for t in (0.0, 1.0, 2.0, 3.0)]
    trace = estimate_wave_speed(V, snaps)
    assert trace.speed == pytest.approx(0.1, rel=0.02)
    with pytest.raises(FrontNotFoundError):
        estimate_wave_speed(V, [(0.0, np.zeros(V.n_dofs)), (1.0, np.zeros(V.n_dofs))])
