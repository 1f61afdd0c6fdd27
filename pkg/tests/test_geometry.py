import numpy as np
import pytest

from subspacenet.dataio import ValidationError
from subspacenet.geometry import (
    Conic,
    FitError,
    GenerationError,
    SceneSpec,
    circle_params,
    conic_distance,
    conic_residual,
    fit_circle_algebraic,
    fit_conic_general,
    fit_ellipse_direct,
    fit_line_tls,
    generate_scene,
    make_lce_instance,
    make_multimodel_instance,
    random_structure,
    sequential_fit,
)
from subspacenet.metrics import error_rate


def test_residual_on_unit_circle():
    circle = Conic([1, 0, 1, 0, 0, -1])
    assert abs(conic_residual((1.0, 0.0), circle)) < 1e-15
    assert conic_residual((0.0, 0.0), circle) == pytest.approx(-1 / np.sqrt(3))


def test_residual_on_line():
    assert conic_residual((2.0, 2.0), Conic([0, 0, 0, 1, -1, 0])) == 0.0


def test_conic_normalization_and_sign():
    c = Conic([0, 0, 0, -3, 4, 0])
    assert np.linalg.norm(c.coef) == pytest.approx(1.0)
    assert c.coef[3] > 0
    with pytest.raises(ValidationError):
        Conic(np.zeros(6))


def test_residual_linear_in_coefficients():
    rng = np.random.default_rng(0)
    for _ in range(50):
        coef = rng.normal(size=6)
        p = rng.normal(size=2)
        alpha = rng.uniform(0.1, 10)
        x, y = p
        raw = lambda c: c[0] * x * x + c[1] * x * y + c[2] * y * y + c[3] * x + c[4] * y + c[5]
        assert raw(alpha * coef) == pytest.approx(alpha * raw(coef), rel=1e-12, abs=1e-12)
        # normalization divides out the scale
        assert conic_residual(p, Conic(alpha * coef)) == pytest.approx(
            conic_residual(p, Conic(coef)), rel=1e-10, abs=1e-12)


def _brute_distance(points, sampler, n=200001):
    t = np.linspace(0, 2 * np.pi, n)
    curve = sampler(t)
    out = []
    for p in points.T:
        out.append(np.sqrt(np.min(np.sum((curve - p[:, None]) ** 2, axis=0))))
    return np.array(out)


def test_ellipse_distance_matches_dense_sampling():
    rng = np.random.default_rng(1)
    center, a, b, theta = np.array([0.2, -0.1]), 0.7, 0.3, 0.4
    conic = Conic.ellipse(center, a, b, theta)
    pts = rng.uniform(-1, 1, size=(2, 30))
    ct, st = np.cos(theta), np.sin(theta)

    def sampler(t):
        u, v = a * np.cos(t), b * np.sin(t)
        return center[:, None] + np.vstack([ct * u - st * v, st * u + ct * v])

    np.testing.assert_allclose(conic_distance(pts, conic), _brute_distance(pts, sampler),
                               atol=1e-5)


def test_circle_and_line_distance():
    pts = np.array([[0.0, 3.0, 1.0], [0.0, 0.0, 5.0]])
    np.testing.assert_allclose(conic_distance(pts, Conic.circle((0, 0), 1)), [1, 2, np.sqrt(26) - 1])
    np.testing.assert_allclose(conic_distance(pts, Conic([0, 0, 0, 0, 1, 0])), [0, 0, 5])


def test_zero_noise_lce_on_curve():
    for seed in range(5):
        spec = SceneSpec.lce(noise_sigma=0.0, seed=seed)
        inst, structures = generate_scene(spec)
        for k, s in enumerate(structures):
            pts = inst.points[:, inst.labels == k]
            assert np.max(np.abs(conic_residual(pts, s.conic))) <= 1e-12


def test_lce_contract():
    inst = make_lce_instance(SceneSpec.lce(seed=4))
    assert inst.n_clusters == 4 and inst.n_points == 400
    assert np.bincount(inst.labels).tolist() == [100] * 4
    spec = SceneSpec.lce(seed=4, outliers=25)
    inst = make_lce_instance(spec)
    assert inst.n_clusters == 5 and np.sum(inst.labels == 4) == 25
    with pytest.raises(ValidationError):
        make_lce_instance(SceneSpec.multimodel("line", 4))


def test_lce_noise_level_monte_carlo():
    # geometric distance to the generating curve, measured per structure
    rms = []
    for seed in range(100):
        inst, structures = generate_scene(SceneSpec.lce(seed=seed))
        for k, s in enumerate(structures):
            d = s.distance(inst.points[:, inst.labels == k])
            rms.append(np.sqrt(np.mean(d**2)))
    rms = np.array(rms)
    assert rms.min() >= 0.03 and rms.max() <= 0.08


def test_generation_is_deterministic():
    a = make_lce_instance(SceneSpec.lce(seed=11))
    b = make_lce_instance(SceneSpec.lce(seed=11))
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.labels, b.labels)
    c = make_lce_instance(SceneSpec.lce(seed=12))
    assert not np.array_equal(a.points, c.points)


def test_structures_inside_box():
    rng = np.random.default_rng(0)
    for kind in ("line", "circle", "ellipse"):
        for _ in range(50):
            s = random_structure(kind, rng)
            pts = s.sample(200, rng)
            assert np.all(np.abs(pts) <= 1 + 1e-12)
            if kind == "ellipse":
                p = s.params
                assert max(p["a"], p["b"]) >= 1.2 * min(p["a"], p["b"])


def test_generation_error_when_box_too_small():
    with pytest.raises(GenerationError):
        generate_scene(SceneSpec([("circle", 10)], domain_box=(0, 0.1, 0, 0.1)))


def test_min_support_enforced():
    with pytest.raises(ValidationError):
        SceneSpec([("ellipse", 4)])
    with pytest.raises(ValidationError):
        SceneSpec([("hyperbola", 10)])


def test_multimodel_lines_zero_noise():
    inst, structures = generate_scene(SceneSpec.multimodel("line", 3, noise_sigma=0.0, seed=2))
    for k, s in enumerate(structures):
        assert np.max(np.abs(conic_residual(inst.points[:, inst.labels == k], s.conic))) <= 1e-12


def test_multimodel_counts():
    inst = make_multimodel_instance(SceneSpec.multimodel("ellipse", 5, points_per_structure=40))
    assert inst.n_clusters == 5 and inst.n_points == 200
    with pytest.raises(ValidationError):
        make_multimodel_instance(SceneSpec.multimodel("ellipse", 7))


def test_multimodel_relabeling_keeps_point_sets():
    inst = make_multimodel_instance(SceneSpec.multimodel("circle", 4, seed=9))
    perm = np.array([2, 0, 3, 1])
    relabeled = perm[inst.labels]
    sets = lambda lab: sorted(tuple(sorted(map(tuple, inst.points[:, lab == k].T.round(12))))
                              for k in np.unique(lab))
    assert sets(inst.labels) == sets(relabeled)


def _normalized(c):
    c = np.asarray(c, float)
    c = c / np.linalg.norm(c)
    return c if c[np.flatnonzero(np.abs(c) > 1e-12)[0]] > 0 else -c


def test_direct_ellipse_recovers_ground_truth():
    t = np.linspace(0, 2 * np.pi, 20, endpoint=False)
    pts = np.vstack([2 * np.cos(t), np.sin(t)])
    fit = fit_ellipse_direct(pts)
    np.testing.assert_allclose(fit.coef, _normalized([0.25, 0, 1, 0, 0, -1]), atol=1e-8)
    assert fit.discriminant < 0


def test_direct_ellipse_on_circle_points():
    t = np.linspace(0, 2 * np.pi, 15, endpoint=False)
    fit = fit_ellipse_direct(np.vstack([0.3 + 0.5 * np.cos(t), -0.2 + 0.5 * np.sin(t)]))
    a, b, c = fit.coef[:3]
    assert abs(b) <= 1e-8 and abs(a - c) <= 1e-8


def test_direct_ellipse_rejects_collinear():
    with pytest.raises(FitError):
        fit_ellipse_direct(np.vstack([np.arange(5.0), 2 * np.arange(5.0)]))


def test_direct_ellipse_rigid_invariance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        t = rng.uniform(0, 2 * np.pi, 30)
        pts = np.vstack([0.6 * np.cos(t), 0.3 * np.sin(t)]) + rng.normal(0, 0.02, (2, 30))
        phi = rng.uniform(0, 2 * np.pi)
        rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
        shift = rng.uniform(-1, 1, 2)
        moved = rot @ pts + shift[:, None]
        c = fit_ellipse_direct(pts).coef
        # transform the conic: q(p) = c(rot^T (p - shift))
        a, b, cc, d, e, f = c
        m = np.array([[a, b / 2, d / 2], [b / 2, cc, e / 2], [d / 2, e / 2, f]])
        h = np.eye(3)
        h[:2, :2] = rot.T
        h[:2, 2] = -rot.T @ shift
        mt = h.T @ m @ h
        expected = [mt[0, 0], 2 * mt[0, 1], mt[1, 1], 2 * mt[0, 2], 2 * mt[1, 2], mt[2, 2]]
        np.testing.assert_allclose(fit_ellipse_direct(moved).coef, _normalized(expected),
                                   atol=1e-6)


def test_line_fit():
    fit = fit_line_tls(np.array([[0.0, 1, 2], [0.0, 1, 2]]))
    np.testing.assert_allclose(fit.coef, _normalized([0, 0, 0, 1, -1, 0]), atol=1e-12)
    with pytest.raises(FitError):
        fit_line_tls(np.array([[1.0, 1.0], [2.0, 2.0]]))


def test_circle_fit_recovers_center_radius():
    t = np.linspace(0, 2 * np.pi, 10, endpoint=False)
    fit = fit_circle_algebraic(np.vstack([1 + 3 * np.cos(t), 2 + 3 * np.sin(t)]))
    center, r = circle_params(fit)
    np.testing.assert_allclose(center, [1, 2], atol=1e-8)
    assert r == pytest.approx(3, abs=1e-8)
    assert fit.coef[1] == 0 and fit.coef[0] == pytest.approx(fit.coef[2])


def test_general_conic_fit_hyperbola():
    t = np.linspace(-2, 2, 12)
    pts = np.vstack([np.cosh(t), np.sinh(t)])
    np.testing.assert_allclose(fit_conic_general(pts).coef, _normalized([1, 0, -1, 0, 0, -1]),
                               atol=1e-8)


def test_sequential_fit_two_lines_exact():
    from subspacenet.geometry import SceneSpec
    for seed in range(5):
        inst = make_multimodel_instance(
            SceneSpec.multimodel("line", 2, points_per_structure=50, noise_sigma=0.0, seed=seed))
        pred = sequential_fit(inst, [("line", 2)], 1e-6, 200, seed=seed)
        assert error_rate(pred, inst.labels) == 0.0


def test_sequential_fit_lce_contract():
    inst = make_lce_instance(SceneSpec.lce(seed=5, points_per_structure=60))
    pred = sequential_fit(inst, [("line", 1), ("circle", 1), ("ellipse", 2)], 0.1, 100, seed=0)
    assert pred.shape == (inst.n_points,)
    assert set(np.unique(pred)) <= {0, 1, 2, 3}
    assert np.all(pred >= 0)


def test_sequential_fit_preconditions():
    inst = make_lce_instance(SceneSpec.lce(seed=5, points_per_structure=20))
    with pytest.raises(FitError):
        sequential_fit(inst, [("line", 1)], 0.1, 0)
    with pytest.raises(ValueError):
        sequential_fit(inst, [("line", 1)], 0.0, 10)
    tiny = make_multimodel_instance(SceneSpec.multimodel("line", 2, points_per_structure=2,
                                                         noise_sigma=0.0))
    with pytest.raises(FitError):
        sequential_fit(tiny, [("ellipse", 2)], 1e-6, 10)
