import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from dkfkit.errors import ConfigError, InsufficientDataError, UnstableDynamicsError
from dkfkit.gaussian import check_pd
from dkfkit.learn import (
    ConstantCovariance,
    HyperGrid,
    KernelSpec,
    MlpModel,
    NwModel,
    SupervisedSet,
    fit_constant_q,
    fit_q_residuals,
    fit_state_dynamics,
    gp_fit,
    gp_from_hyperparameters,
    gp_predict,
    kernel_eval,
    load_model,
    log_marginal_likelihood,
    loo_mse,
    loss_and_grad,
    mlp_fit,
    mlp_predict,
    nw_fit,
    octant_index,
    nw_predict,
    save_model,
    sparsify_octants,
)
from dkfkit.models import LinearStateSpec, simulate_states

# high-precision dense solves, see oracle script in the notes
GP_TOY_X = [-1.3, -0.4, 0.2, 0.9, 1.7]
GP_TOY_Z = [0.5, -0.2, 0.8, 1.1, -0.6]
GP_TOY_ALPHA = [0.9689288312543768, -1.599276859994684, 0.9981895960494709, 1.1172178427063661, -1.1607458323760256]
GP_MK_X = [[0.1, -0.5], [1.2, 0.3], [-0.7, 0.8], [0.4, 1.5], [-1.1, -1.0], [0.9, -0.2]]
GP_MK_Z = [0.3, -1.2, 0.7, 0.05, -0.4, 1.0]
GP_MK_PRED = 0.10672069958273459


def _sine_set(m=60, seed=0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-3, 3, m))
    return SupervisedSet(x, np.sin(x))


class TestNw:
    def test_selected_bandwidth_minimizes_loo(self):
        data = _sine_set()
        grid = np.logspace(-2, 1, 12)
        h = nw_fit(data, grid).bandwidth
        scores = [loo_mse(data.xs, data.zs, g) for g in grid]
        assert loo_mse(data.xs, data.zs, h) <= min(scores)

    def test_duplicate_inputs_average(self):
        xs, zs = np.array([[1.0], [1.0]]), np.array([[2.0], [4.0]])
        for h in (1e-3, 1.0, 1e3):
            assert nw_predict(NwModel(h, xs, zs), np.array([1.0]))[0] == pytest.approx(3.0, abs=1e-12)

    def test_grid_of_one(self):
        assert nw_fit(_sine_set(), [0.37]).bandwidth == 0.37

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            nw_fit(_sine_set(), [])

    def test_single_training_point(self):
        m = NwModel(0.5, np.array([[0.2, -1.0]]), np.array([[3.0, 4.0]]))
        for x in np.random.default_rng(1).standard_normal((5, 2)) * 10:
            np.testing.assert_array_equal(nw_predict(m, x), [3.0, 4.0])

    def test_symmetric_pair(self):
        m = NwModel(0.8, np.array([[-1.0], [1.0]]), np.array([[2.0], [6.0]]))
        assert nw_predict(m, np.zeros(1))[0] == pytest.approx(4.0, abs=1e-14)

    def test_small_bandwidth_is_nearest_neighbour(self):
        rng = np.random.default_rng(2)
        xs = rng.standard_normal((40, 3))
        zs = rng.standard_normal((40, 2))
        scale = np.median(np.linalg.norm(xs[:, None] - xs[None], axis=2))
        m = NwModel(1e-6 * scale, xs, zs)
        Xq = rng.standard_normal((30, 3))
        nearest = np.argmin(np.linalg.norm(Xq[:, None] - xs[None], axis=2), axis=1)
        np.testing.assert_allclose(m.predict(Xq), zs[nearest], atol=1e-12)

    def test_underflow_flag(self):
        m = NwModel(1e-300, np.array([[0.0], [1.0]]), np.array([[1.0], [2.0]]))
        pred, flag = nw_predict(m, np.array([0.9]), return_flag=True)
        assert flag and pred[0] == 2.0

    def test_loo_underflow_uses_other_nearest_neighbour(self):
        rng = np.random.default_rng(3)
        xs, zs = rng.standard_normal((25, 2)), rng.standard_normal((25, 2))
        d = np.linalg.norm(xs[:, None] - xs[None], axis=2)
        np.fill_diagonal(d, np.inf)
        ref = np.sum((zs[np.argmin(d, axis=1)] - zs) ** 2) / 25
        assert loo_mse(xs, zs, 1e-300) == pytest.approx(ref, rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(hst.integers(0, 10_000), hst.floats(0.05, 5.0))
    def test_convex_hull(self, seed, h):
        rng = np.random.default_rng(seed)
        xs, zs = rng.standard_normal((15, 2)), rng.standard_normal((15, 3))
        pred = NwModel(h, xs, zs).predict(rng.standard_normal((10, 2)) * 3)
        assert np.all(pred >= zs.min(axis=0) - 1e-12)
        assert np.all(pred <= zs.max(axis=0) + 1e-12)


class TestResidualCovariance:
    def test_constant_residual(self):
        rng = np.random.default_rng(3)
        xs = rng.standard_normal((30, 2))
        r = np.array([0.5, -1.5])
        data = SupervisedSet(xs, xs + r)
        Q = fit_q_residuals(data, lambda X: X, [0.3, 1.0], ridge=1e-6)
        for q in Q(rng.standard_normal((5, 2))):
            np.testing.assert_allclose(q, np.outer(r, r) + 1e-6 * np.eye(2), atol=1e-12)

    def test_zero_residual(self):
        rng = np.random.default_rng(4)
        xs = rng.standard_normal((30, 2))
        Q = fit_q_residuals(SupervisedSet(xs, xs @ [[1.0, 2.0], [0.5, 0.0]]),
                            lambda X: X @ [[1.0, 2.0], [0.5, 0.0]], [1.0], ridge=1e-6)
        np.testing.assert_allclose(Q(xs[:3]), np.broadcast_to(1e-6 * np.eye(2), (3, 2, 2)), atol=1e-15)

    def test_heteroskedastic(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-3, 3, 2000)
        sd = np.where(x < 0, np.sqrt(0.1), 1.0)
        data = SupervisedSet(x, sd * rng.standard_normal(2000))
        Q = fit_q_residuals(data, lambda X: np.zeros((np.atleast_2d(X).shape[0], 1)))
        q = Q(np.array([[-2.0], [2.0]]))[:, 0, 0]
        assert q[0] == pytest.approx(0.1, rel=0.3)
        assert q[1] == pytest.approx(1.0, rel=0.3)

    def test_outputs_are_pd(self):
        rng = np.random.default_rng(6)
        xs = rng.standard_normal((50, 3))
        zs = rng.standard_normal((50, 2))
        Q = fit_q_residuals(SupervisedSet(xs, zs), lambda X: np.zeros((len(X), 2)))
        assert all(check_pd(q) for q in Q(rng.standard_normal((100, 3)) * 5))

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            fit_q_residuals(SupervisedSet(np.zeros((2, 1)), np.zeros((2, 2))), lambda X: np.zeros((len(X), 2)))

    def test_a6_form_is_pd(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal(80)
        data = SupervisedSet(x, 0.5 * x + 0.3 * rng.standard_normal(80))
        Q = fit_q_residuals(data, lambda X: 0.5 * np.atleast_2d(X), form="a6", sigma_z=[[0.01]])
        assert all(check_pd(q) for q in Q(np.linspace(-2, 2, 9)[:, None]))

    def test_constant_q(self):
        xs = np.arange(6.0)[:, None]
        zs = xs + np.array([[1.0], [-1.0], [1.0], [-1.0], [1.0], [-1.0]])
        Q = fit_constant_q(SupervisedSet(xs, zs), lambda X: X, ridge=0.0)
        np.testing.assert_allclose(Q.Q, [[1.0]])


class TestKernels:
    @pytest.mark.parametrize("family", ["rbf", "mk"])
    def test_peak_value(self, family):
        k = KernelSpec(family, 2.5, 0.7)
        x = np.array([0.3, -1.0, 2.0])
        assert kernel_eval(k, x, x) == pytest.approx(2.5, abs=1e-15)

    def test_mk_floor(self):
        m, sl2 = 4, 0.5
        k = KernelSpec("mk", 1.7, sl2)
        x = np.zeros(m)
        y = x.copy()
        y[2] = 1e6 * np.sqrt(sl2)
        assert kernel_eval(k, x, y) >= (m - 1) / m * 1.7

    def test_rbf_vanishes(self):
        k = KernelSpec("rbf", 1.7, 0.5)
        y = np.zeros(4)
        y[2] = 1e6 * np.sqrt(0.5)
        assert kernel_eval(k, np.zeros(4), y) < 1e-12 * 1.7

    @pytest.mark.parametrize("family", ["rbf", "mk"])
    def test_symmetry(self, family):
        rng = np.random.default_rng(8)
        k = KernelSpec(family, 1.3, 0.9)
        for _ in range(1000):
            x, y = rng.standard_normal((2, 3))
            assert kernel_eval(k, x, y) == kernel_eval(k, y, x)

    @pytest.mark.parametrize("family", ["rbf", "mk"])
    def test_gram_psd(self, family):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((60, 4))
        K = KernelSpec(family, 1.0, 0.8).matrix(X, X)
        assert np.linalg.eigvalsh(K)[0] >= -1e-10 * np.trace(K)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernel_eval(KernelSpec("rbf", 1.0, 1.0), np.zeros(2), np.zeros(3))

    def test_bad_family(self):
        with pytest.raises(ConfigError):
            KernelSpec("linear", 1.0, 1.0)


class TestGp:
    def test_selected_triple_maximizes_evidence(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(-2, 2, (40, 1))
        K = KernelSpec("rbf", 1.0, 0.5).matrix(x, x) + 0.1 * np.eye(40)
        z = np.linalg.cholesky(K) @ rng.standard_normal(40)
        grid = HyperGrid((0.3, 1.0, 3.0), (0.1, 0.5, 2.0), (0.01, 0.1, 1.0))
        model = gp_fit(SupervisedSet(x, z), "rbf", grid)
        best = max(log_marginal_likelihood(KernelSpec("rbf", f, l).matrix(x, x), z, n)
                   for f, l, n in grid.triples())
        k = model.kernel
        chosen = log_marginal_likelihood(k.matrix(x, x), z, model.noise)
        assert chosen == pytest.approx(best, abs=1e-9)

    def test_interpolates_without_noise(self):
        data = SupervisedSet(np.array(GP_TOY_X), np.array(GP_TOY_Z))
        model = gp_fit(data, "rbf", HyperGrid((1.0,), (0.3,), (0.0,)))
        np.testing.assert_allclose(model.predict(data.xs)[:, 0], GP_TOY_Z, atol=1e-10)

    def test_alpha_matches_dense_solve(self):
        data = SupervisedSet(np.array(GP_TOY_X), np.array(GP_TOY_Z))
        model = gp_fit(data, "rbf", HyperGrid((1.5,), (0.6,), (0.01,)))
        np.testing.assert_allclose(model.alpha[:, 0], GP_TOY_ALPHA, atol=1e-10)

    def test_far_point_returns_prior_mean(self):
        data = SupervisedSet(np.array(GP_TOY_X), np.array(GP_TOY_Z))
        model = gp_from_hyperparameters(data, KernelSpec("rbf", 1.5, 0.6), 0.01)
        assert gp_predict(model, np.array([1e3]))[0] == pytest.approx(0.0, abs=1e-300)

    def test_random_instance_prediction(self):
        data = SupervisedSet(np.array(GP_MK_X), np.array(GP_MK_Z))
        model = gp_from_hyperparameters(data, KernelSpec("mk", 0.8, 0.5), 0.05)
        assert gp_predict(model, np.array([0.25, 0.6]))[0] == pytest.approx(GP_MK_PRED, abs=1e-9)

    def test_mk_single_coordinate_bound(self):
        rng = np.random.default_rng(11)
        X = rng.standard_normal((30, 5))
        data = SupervisedSet(X, rng.standard_normal(30))
        k = KernelSpec("mk", 1.2, 0.7)
        model = gp_from_hyperparameters(data, k, 0.1)
        bound = k.sigma_f2 / 5 * np.sum(np.abs(model.alpha[:, 0]))
        x = rng.standard_normal(5)
        base = gp_predict(model, x)[0]
        for j in range(5):
            for delta in (-50.0, -1.0, 0.3, 4.0, 1e6):
                y = x.copy()
                y[j] += delta
                assert abs(gp_predict(model, y)[0] - base) <= bound + 1e-12

    def test_needs_two_points(self):
        with pytest.raises(InsufficientDataError):
            gp_fit(SupervisedSet([[0.0]], [[1.0]]))

    def test_deterministic(self):
        data = _sine_set(40)
        a, b = gp_fit(data, "mk"), gp_fit(data, "mk")
        np.testing.assert_array_equal(a.alpha, b.alpha)


class TestOctants:
    def _ring(self):
        ang = np.deg2rad(22.5 + 45 * np.arange(8))
        zs = np.column_stack([np.cos(ang), np.sin(ang)])
        xs = np.random.default_rng(12).standard_normal((8, 3))
        return SupervisedSet(xs, zs)

    def test_one_per_octant_is_permutation(self):
        data = self._ring()
        perm = np.random.default_rng(13).permutation(8)
        out = sparsify_octants(data.subset(perm))
        np.testing.assert_allclose(out.xs, data.xs)
        np.testing.assert_allclose(out.zs, data.zs)

    def test_two_in_one_octant(self):
        data = SupervisedSet([[1.0, 2.0], [3.0, -4.0]], [[1.0, 0.1], [2.0, 0.5]])
        out = sparsify_octants(data)
        assert out.m == 1
        np.testing.assert_allclose(out.xs, [[2.0, -1.0]])
        np.testing.assert_allclose(out.zs, [[1.5, 0.3]])

    def test_grand_mean_preserved(self):
        rng = np.random.default_rng(14)
        data = SupervisedSet(rng.standard_normal((200, 4)), rng.standard_normal((200, 2)))
        out = sparsify_octants(data)
        counts = np.bincount(octant_index(data.zs)[0], minlength=8)
        counts = counts[counts > 0]
        np.testing.assert_allclose(counts @ out.xs / counts.sum(), data.xs.mean(axis=0), atol=1e-12)

    def test_idempotent(self):
        rng = np.random.default_rng(15)
        data = SupervisedSet(rng.standard_normal((100, 3)), rng.standard_normal((100, 2)))
        once = sparsify_octants(data)
        twice = sparsify_octants(once)
        np.testing.assert_array_equal(once.xs, twice.xs)
        np.testing.assert_array_equal(once.zs, twice.zs)

    def test_half_open_boundaries(self):
        data = SupervisedSet(np.arange(3.0)[:, None], [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        np.testing.assert_array_equal(octant_index(data.zs)[0], [0, 1, 2])

    def test_zero_velocity_flagged(self):
        data = SupervisedSet([[1.0], [2.0]], [[0.0, 0.0], [1.0, 0.1]])
        out, zeros = sparsify_octants(data, return_diagnostics=True)
        assert zeros == 1 and out.m == 1


class TestMlp:
    def test_zero_output_weights(self):
        rng = np.random.default_rng(16)
        m = MlpModel(rng.standard_normal((5, 3)), rng.standard_normal(5), np.zeros((2, 5)), np.array([0.7, -0.2]))
        for x in rng.standard_normal((4, 3)):
            np.testing.assert_array_equal(mlp_predict(m, x), [0.7, -0.2])

    def test_linear_target(self):
        rng = np.random.default_rng(17)
        X = rng.standard_normal((500, 4))
        W = rng.standard_normal((2, 4)) * 0.5
        model = mlp_fit(SupervisedSet(X, X @ W.T))
        assert np.mean((model.predict(X) - X @ W.T) ** 2) < 1e-3

    def test_gradient_check(self):
        rng = np.random.default_rng(18)
        X, Z = rng.standard_normal((25, 3)), rng.standard_normal((25, 2))
        h = 4
        theta = rng.standard_normal(h * 3 + h + 2 * h + 2)
        _, g = loss_and_grad(theta, X, Z, h, weight_decay=1e-3)
        eps = 1e-6
        num = np.array([(loss_and_grad(theta + eps * e, X, Z, h, 1e-3)[0]
                         - loss_and_grad(theta - eps * e, X, Z, h, 1e-3)[0]) / (2 * eps)
                        for e in np.eye(theta.size)])
        assert np.max(np.abs(num - g)) / np.max(np.abs(g)) < 1e-5

    def test_deterministic(self):
        data = _sine_set(80)
        a = mlp_fit(data, hidden_width=5, epochs=200, seed=3)
        b = mlp_fit(data, hidden_width=5, epochs=200, seed=3)
        np.testing.assert_array_equal(a.W1, b.W1)

    def test_bad_width(self):
        with pytest.raises(ConfigError):
            mlp_fit(_sine_set(), hidden_width=0)


class TestStateDynamics:
    def test_noise_free_half(self):
        z = 3.0 * 0.5 ** np.arange(20)
        st = fit_state_dynamics(z[:, None], ridge=1e-6)
        assert st.A[0, 0] == pytest.approx(0.5, abs=1e-14)
        assert st.gamma[0, 0] == pytest.approx(1e-6, rel=1e-6)

    def test_known_parameters(self):
        A = np.array([[0.7, 0.2], [-0.1, 0.5]])
        true = LinearStateSpec.from_dynamics(A, [[1.0, 0.3], [0.3, 0.5]])
        Z = simulate_states(true, 10_000, np.random.default_rng(19))
        st = fit_state_dynamics(Z)
        assert np.max(np.abs(st.A - A)) < 0.05
        np.testing.assert_allclose(st.gamma, true.gamma, atol=0.05)

    def test_unit_root(self):
        with pytest.raises(UnstableDynamicsError) as info:
            fit_state_dynamics(np.full((10, 1), 2.0))
        assert info.value.spectral_radius == pytest.approx(1.0)

    def test_too_few_pairs(self):
        with pytest.raises(InsufficientDataError):
            fit_state_dynamics(np.zeros((2, 2)))


class TestSerialize:
    def test_round_trip_predictions(self, tmp_path):
        rng = np.random.default_rng(20)
        X = rng.standard_normal((30, 2))
        data = SupervisedSet(X, np.column_stack([np.sin(X[:, 0]), X[:, 1]]))
        models = {
            "nw": nw_fit(data),
            "gp": gp_fit(data, "mk"),
            "mlp": mlp_fit(data, hidden_width=4, epochs=50),
            "q": fit_q_residuals(data, lambda Xq: np.zeros((len(Xq), 2))),
            "c": ConstantCovariance(np.eye(2) * 0.3),
            "state": LinearStateSpec.from_dynamics([[0.5]], [[0.75]]),
        }
        path = tmp_path / "bundle.json"
        save_model(models, path)
        back = load_model(path)
        Xq = rng.standard_normal((7, 2))
        for key in ("nw", "gp", "mlp"):
            np.testing.assert_array_equal(back[key].predict(Xq), models[key].predict(Xq))
        np.testing.assert_array_equal(back["q"](Xq), models["q"](Xq))
        np.testing.assert_array_equal(back["c"](Xq), models["c"](Xq))
        np.testing.assert_array_equal(back["state"].S, models["state"].S)

    def test_bad_version(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text('{"version": 99, "model": {}}')
        with pytest.raises(ConfigError):
            load_model(p)
