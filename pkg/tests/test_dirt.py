import numpy as np
import pytest
from scipy.integrate import simpson

from deepis.basis import UnivariateBasis, truncated_normal_reference, uniform_reference
from deepis.dirt import DIRT, BridgingSchedule, build_dirt
from deepis.estimators import hellinger_estimate
from deepis.ftt import CrossOptions, FunctionalTT
from deepis.sirt import build_sirt


def uniform_setup(d, n):
    bases = [UnivariateBasis.uniform(0.0, 1.0, n) for _ in range(d)]
    refs = [uniform_reference(0.0, 1.0) for _ in range(d)]
    return bases, refs


def smooth_target_2d(x):
    x = np.atleast_2d(x)
    return -5.0 * ((x[:, 0] - 0.4) ** 2 + (x[:, 1] - 0.6) ** 2) - 2.0 * x[:, 0] * x[:, 1]


def tempered_schedule(log_target, betas):
    return BridgingSchedule(
        [lambda x, b=b: b * log_target(x) for b in betas],
        [{"beta": b} for b in betas],
    )


OPTS = CrossOptions(max_rank=6, sweeps=4, tolerance=1e-4, validation_size=200)


def test_single_layer_reference_target_is_identity():
    bases, refs = uniform_setup(2, 9)
    schedule = BridgingSchedule([lambda x: np.zeros(len(np.atleast_2d(x)))])
    dirt = build_dirt(schedule, bases, refs, OPTS, seed=0)
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 1, size=(300, 2))
    np.testing.assert_allclose(dirt.forward(u), u, atol=1e-8)


def test_single_layer_matches_plain_sirt():
    bases, refs = uniform_setup(2, 11)
    schedule = BridgingSchedule([smooth_target_2d])
    dirt = build_dirt(schedule, bases, refs, OPTS, seed=1)
    layer = dirt.layers[0]
    direct = build_sirt(layer.tt, refs, tau=layer.tau)
    rng = np.random.default_rng(1)
    u = rng.uniform(0, 1, size=(1000, 2))
    np.testing.assert_allclose(dirt.forward(u), direct.irt(u), atol=1e-8)


def test_zero_layer_dirt_is_identity():
    _, refs = uniform_setup(2, 5)
    dirt = DIRT([], refs)
    rng = np.random.default_rng(2)
    u = rng.uniform(0, 1, size=(50, 2))
    np.testing.assert_allclose(dirt.forward(u), u)
    np.testing.assert_allclose(dirt.log_density(u), 0.0, atol=1e-14)


def test_inverse_forward_roundtrip_d5_l3():
    d = 5
    bases, refs = uniform_setup(d, 9)

    def log_target(x):
        x = np.atleast_2d(x)
        centered = x - 0.5
        return -3.0 * np.einsum("mk,mk->m", centered, centered) - np.sin(
            2 * x[:, 0]
        ) * centered[:, 1]

    dirt = build_dirt(tempered_schedule(log_target, [0.1, 0.5, 1.0]), bases, refs, OPTS, seed=3)
    rng = np.random.default_rng(3)
    u = rng.uniform(1e-4, 1 - 1e-4, size=(500, d))
    x = dirt.forward(u)
    np.testing.assert_allclose(dirt.inverse(x), u, atol=1e-7)


def test_forward_monotone_in_last_coordinate():
    bases, refs = uniform_setup(2, 9)
    dirt = build_dirt(tempered_schedule(smooth_target_2d, [0.3, 1.0]), bases, refs, OPTS, seed=4)
    u_last = np.linspace(0.01, 0.99, 50)
    pts = np.column_stack([np.full(50, 0.37), u_last])
    x = dirt.forward(pts)
    assert np.all(np.diff(x[:, 1]) > 0)
    np.testing.assert_allclose(x[:, 0], x[0, 0], atol=1e-12)


def test_log_density_single_layer_equals_layer_density():
    bases, refs = uniform_setup(2, 9)
    dirt = build_dirt(BridgingSchedule([smooth_target_2d]), bases, refs, OPTS, seed=5)
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 1, size=(200, 2))
    np.testing.assert_allclose(dirt.log_density(pts), dirt.layers[0].log_density(pts), atol=1e-12)


def test_log_density_normalized_d1_l2():
    bases, refs = uniform_setup(1, 17)

    def log_target(x):
        x = np.atleast_2d(x)
        return -8.0 * (x[:, 0] - 0.3) ** 2

    dirt = build_dirt(tempered_schedule(log_target, [0.3, 1.0]), bases, refs, OPTS, seed=6)
    x = np.linspace(0, 1, 16 * 600 + 1)
    vals = np.exp(dirt.log_density(x[:, None]))
    assert simpson(vals, x=x) == pytest.approx(1.0, abs=1e-5)


def test_log_density_consistent_with_fd_jacobian():
    bases, refs = uniform_setup(2, 13)
    dirt = build_dirt(tempered_schedule(smooth_target_2d, [0.3, 1.0]), bases, refs, OPTS, seed=7)
    rng = np.random.default_rng(7)
    u = rng.uniform(0.05, 0.95, size=(100, 2))
    x, logp = dirt.forward_with_log_density(u)
    eps = 1e-6
    for i in range(u.shape[0]):
        jac = np.zeros((2, 2))
        for j in range(2):
            up, um = u[i].copy(), u[i].copy()
            up[j] += eps
            um[j] -= eps
            jac[:, j] = (dirt.forward(up[None])[0] - dirt.forward(um[None])[0]) / (2 * eps)
        logdet = np.log(abs(np.linalg.det(jac)))
        # log pbar(T(u)) - log lambda(u) = -log |grad T(u)|
        assert logp[i] - 0.0 == pytest.approx(-logdet, rel=1e-3, abs=1e-3)


def test_forward_with_log_density_matches_log_density():
    bases, refs = uniform_setup(3, 9)

    def log_target(x):
        x = np.atleast_2d(x)
        c = x - 0.45
        return -4.0 * np.einsum("mk,mk->m", c, c)

    dirt = build_dirt(tempered_schedule(log_target, [0.2, 1.0]), bases, refs, OPTS, seed=8)
    rng = np.random.default_rng(8)
    u = rng.uniform(1e-3, 1 - 1e-3, size=(400, 3))
    x, logp = dirt.forward_with_log_density(u)
    np.testing.assert_allclose(logp, dirt.log_density(x), atol=1e-7)


def test_pullback_identity_dirt():
    _, refs = uniform_setup(2, 5)
    dirt = DIRT([], refs)
    rng = np.random.default_rng(9)
    u = rng.uniform(0, 1, size=(100, 2))
    np.testing.assert_allclose(dirt.pullback_log(smooth_target_2d, u), smooth_target_2d(u))


def test_pullback_of_own_density_is_reference():
    bases, refs = uniform_setup(2, 11)
    dirt = build_dirt(tempered_schedule(smooth_target_2d, [0.4, 1.0]), bases, refs, OPTS, seed=10)
    rng = np.random.default_rng(10)
    u = rng.uniform(1e-3, 1 - 1e-3, size=(500, 2))
    out = dirt.pullback_log(dirt.log_density, u)
    np.testing.assert_allclose(out, 0.0, atol=1e-7)  # log lambda = 0 (uniform)


def test_pullback_preserves_integral_d1():
    bases, refs = uniform_setup(1, 17)

    def log_target(x):
        x = np.atleast_2d(x)
        return -6.0 * (x[:, 0] - 0.7) ** 2

    dirt = build_dirt(tempered_schedule(log_target, [0.3, 1.0]), bases, refs, OPTS, seed=11)

    def log_phi(x):
        x = np.atleast_2d(x)
        return np.sin(3 * x[:, 0]) - 2.0 * x[:, 0] ** 2

    x = np.linspace(0, 1, 16 * 800 + 1)
    direct = np.trapezoid(np.exp(log_phi(x[:, None])), x)
    pulled = np.trapezoid(np.exp(dirt.pullback_log(log_phi, x[:, None])), x)
    assert pulled == pytest.approx(direct, rel=1e-5)


def test_hellinger_telescoping():
    bases, refs = uniform_setup(2, 13)
    betas = [0.2, 0.6, 1.0]
    dirt = build_dirt(tempered_schedule(smooth_target_2d, betas), bases, refs, OPTS, seed=12)
    n = 40_000
    whole = hellinger_estimate(dirt, smooth_target_2d, n, seed=100)

    head = DIRT(dirt.layers[:-1], refs)
    tail = DIRT([dirt.layers[-1]], refs)

    def pulled_target(u):
        return head.pullback_log(smooth_target_2d, u)

    last = hellinger_estimate(tail, pulled_target, n, seed=101)
    tol = 3.0 * np.hypot(whole.std_error, last.std_error) + 1e-4
    assert abs(whole.value - last.value) <= tol


def test_layer_zetas_positive_and_recorded():
    bases, refs = uniform_setup(2, 9)
    dirt = build_dirt(tempered_schedule(smooth_target_2d, [0.3, 1.0]), bases, refs, OPTS, seed=13)
    assert all(layer.zeta > 0 for layer in dirt.layers)
    assert np.isfinite(dirt.log_zeta_product)
    assert len(dirt.provenance["layers"]) == 2
    assert dirt.n_build_evals > 0


def test_extra_identical_layer_barely_changes_density():
    bases, refs = uniform_setup(2, 13)
    base_betas = [0.4, 1.0]
    dirt2 = build_dirt(tempered_schedule(smooth_target_2d, base_betas), bases, refs, OPTS, seed=14)
    dirt3 = build_dirt(
        tempered_schedule(smooth_target_2d, [0.4, 1.0, 1.0]), bases, refs, OPTS, seed=14
    )
    rng = np.random.default_rng(14)
    pts = rng.uniform(0.02, 0.98, size=(1000, 2))
    delta = np.abs(dirt3.log_density(pts) - dirt2.log_density(pts))
    # the off-grid residual includes the basis error the extra layer corrects
    final_res = dirt3.provenance["layers"][-1]["residual_offgrid"]
    assert np.max(delta) <= 3.0 * max(final_res, 1e-6)


def test_truncated_normal_reference_layers():
    bases = [UnivariateBasis.uniform(-3, 3, 13) for _ in range(2)]
    refs = [truncated_normal_reference(3.0) for _ in range(2)]

    def log_target(x):
        x = np.atleast_2d(x)
        return -0.5 * ((x[:, 0] - 1.0) ** 2 + 2.0 * (x[:, 1] + 0.5) ** 2)

    dirt = build_dirt(tempered_schedule(log_target, [0.3, 1.0]), bases, refs, OPTS, seed=15)
    rng = np.random.default_rng(15)
    u = dirt.sample_reference(rng, 500)
    x = dirt.forward(u)
    np.testing.assert_allclose(dirt.inverse(x), u, atol=1e-7)
    assert np.all(np.isfinite(dirt.log_density(x)))
