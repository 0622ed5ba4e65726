import numpy as np
import pytest

from pehl.nn.gradcheck import grad_check
from pehl.nn.layers import (
    BatchNormParams,
    affine_backward,
    affine_forward,
    batch_norm_backward,
    batch_norm_forward,
    decov_penalty,
    dropout_mask,
    elu,
    elu_backward,
    embed_backward,
    embed_bytes,
)
from pehl.nn.optim import AdamState, adam_step, clip_global_norm, global_norm


class TestEmbedding:
    def test_all_zero_bytes_repeat_row_zero(self):
        table = np.random.default_rng(0).normal(size=(256, 5))
        out = embed_bytes(np.zeros(328, dtype=int), table)
        assert out.shape == (328, 5)
        assert np.array_equal(out, np.tile(table[0], (328, 1)))

    def test_one_hot_table_reproduces_one_hot_encoding(self):
        table = np.eye(256)
        ids = np.array([3, 200, 0])
        out = embed_bytes(ids, table)
        for row, byte in zip(out, ids):
            expected = np.zeros(256)
            expected[byte] = 1.0
            assert np.array_equal(row, expected)

    def test_matches_naive_gather_loop(self):
        rng = np.random.default_rng(1)
        table = rng.normal(size=(256, 7))
        ids = rng.integers(0, 256, size=(4, 50))
        out = embed_bytes(ids, table)
        for i in range(4):
            for t in range(50):
                assert np.array_equal(out[i, t], table[ids[i, t]])

    def test_backward_scatter_adds_shared_rows(self):
        rng = np.random.default_rng(2)
        ids = np.array([[1, 1, 2]])
        dout = rng.normal(size=(1, 3, 4))
        dtable = embed_backward(dout, ids, vocab=256)
        assert np.allclose(dtable[1], dout[0, 0] + dout[0, 1])
        assert np.allclose(dtable[2], dout[0, 2])
        assert np.all(dtable[3:] == 0)


class TestAffine:
    def test_identity(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(affine_forward(x, np.eye(2), np.zeros(2)), x)

    def test_arithmetic_example(self):
        y = affine_forward(np.array([[1.0, 2.0]]), np.eye(2), np.array([3.0, 4.0]))
        assert y.tolist() == [[4.0, 6.0]]

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            n, din, dout = rng.integers(2, 6, size=3)
            x = rng.normal(size=(n, din))
            params = {"W": rng.normal(size=(din, dout)), "b": rng.normal(size=dout)}
            target = rng.normal(size=(n, dout))

            def loss_fn():
                return 0.5 * float(((affine_forward(x, params["W"], params["b"]) - target) ** 2).sum())

            dy = affine_forward(x, params["W"], params["b"]) - target
            _, dW, db = affine_backward(dy, x, params["W"])
            rep = grad_check(loss_fn, params, {"W": dW, "b": db}, h=1e-6)
            assert rep.max_rel_err < 1e-6


class TestBatchNorm:
    def test_constant_column_maps_to_beta(self):
        p = BatchNormParams.create(3)
        p.beta = np.array([5.0, -1.0, 0.5])
        x = np.tile([2.0, 7.0, -3.0], (6, 1))
        y, _ = batch_norm_forward(x, p, train=True)
        assert np.allclose(y, np.tile(p.beta, (6, 1)))

    def test_normalization_identity(self):
        rng = np.random.default_rng(4)
        x = rng.normal(3.0, 2.5, size=(64, 5))
        p = BatchNormParams.create(5)
        y, _ = batch_norm_forward(x, p, train=True)
        assert np.max(np.abs(y.mean(axis=0))) < 1e-8
        assert np.max(np.abs(y.var(axis=0) - 1.0)) < 1e-4  # off by var/(var+eps)

    def test_statistics_match_two_pass_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(32, 4))
        p = BatchNormParams.create(4, momentum=0.5)
        y, _ = batch_norm_forward(x, p, train=True)
        mu = np.array([c.mean() for c in x.T])
        var = np.array([((c - c.mean()) ** 2).mean() for c in x.T])
        expect = (x - mu) / np.sqrt(var + p.eps)
        assert np.max(np.abs(y - expect)) < 1e-12
        assert np.allclose(p.running_mean, 0.5 * mu)
        assert np.allclose(p.running_var, 0.5 * 1.0 + 0.5 * var)

    def test_infer_uses_running_stats(self):
        p = BatchNormParams.create(2)
        p.running_mean = np.array([1.0, -1.0])
        p.running_var = np.array([4.0, 0.25])
        x = np.array([[3.0, 0.0]])
        y, _ = batch_norm_forward(x, p, train=False)
        assert np.allclose(y, [[2.0 / np.sqrt(4 + p.eps), 1.0 / np.sqrt(0.25 + p.eps)]])

    def test_train_backward_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(8, 3))
        params = {"x": x.copy(), "gamma": rng.normal(size=3), "beta": rng.normal(size=3)}
        target = rng.normal(size=(8, 3))

        def run():
            p = BatchNormParams.create(3)
            p.gamma, p.beta = params["gamma"], params["beta"]
            y, cache = batch_norm_forward(params["x"], p, train=True)
            return y, cache

        def loss_fn():
            return 0.5 * float(((run()[0] - target) ** 2).sum())

        y, cache = run()
        dx, dgamma, dbeta = batch_norm_backward(y - target, cache)
        rep = grad_check(loss_fn, params, {"x": dx, "gamma": dgamma, "beta": dbeta})
        assert rep.max_rel_err < 1e-4

    def test_train_mode_needs_batch_of_two(self):
        p = BatchNormParams.create(2)
        with pytest.raises(ValueError):
            batch_norm_forward(np.ones((1, 2)), p, train=True)


class TestElu:
    def test_fixed_points(self):
        assert elu(np.array(0.0)) == 0.0
        assert elu(np.array(2.0)) == 2.0

    def test_saturates_to_minus_one(self):
        # e^-20 - 1 evaluated independently
        expected = np.expm1(-20.0)
        assert abs(elu(np.array(-20.0)) - expected) < 1e-18
        assert abs(elu(np.array(-20.0)) + 1.0) < 1e-8

    def test_derivative(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        dy = np.ones_like(x)
        grad = elu_backward(dy, x)
        h = 1e-7
        numeric = (elu(x + h) - elu(x - h)) / (2 * h)
        assert np.max(np.abs(grad - numeric)) < 1e-7


class TestDropout:
    def test_p_zero_is_identity(self):
        mask = dropout_mask(np.random.default_rng(0), (100,), 0.0)
        assert np.all(mask == 1.0)

    def test_monte_carlo_keep_rate_and_mean(self):
        rng = np.random.default_rng(7)
        mask = dropout_mask(rng, (1_000_000,), 0.5)
        kept = np.count_nonzero(mask) / mask.size
        assert abs(kept - 0.5) < 0.005
        assert abs(mask.mean() - 1.0) < 0.01

    def test_p_one_rejected(self):
        with pytest.raises(ValueError):
            dropout_mask(np.random.default_rng(0), (4,), 1.0)


class TestDecov:
    def test_decorrelated_columns_zero_loss(self):
        h = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        loss, grad = decov_penalty(h, weight=1.0)
        assert loss == 0.0

    def test_hand_covariance_example(self):
        h = np.array([[1.0, 2.0], [-1.0, -2.0]])
        loss, _ = decov_penalty(h, weight=1.0)
        # C = [[1,2],[2,4]]; 0.5*(|C|_F^2 - |diag|^2) = 0.5*(25-17) = 4
        assert loss == pytest.approx(4.0)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        params = {"h": rng.normal(size=(6, 4))}

        def loss_fn():
            return decov_penalty(params["h"], weight=0.7)[0]

        _, grad = decov_penalty(params["h"], weight=0.7)
        rep = grad_check(loss_fn, params, {"h": grad})
        assert rep.max_rel_err < 1e-6


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        adam_step(params, {"w": np.zeros(2)}, state)
        assert np.array_equal(params["w"], [1.0, -2.0])

    def test_first_step_moves_by_lr_sign(self):
        params = {"w": np.array([0.0])}
        state = AdamState(lr=0.001)
        adam_step(params, {"w": np.array([5.0])}, state)
        assert params["w"][0] == pytest.approx(-0.001, abs=1e-6)

    def test_ten_step_trace_matches_scalar_recurrence(self):
        rng = np.random.default_rng(9)
        grads = rng.normal(size=10)
        params = {"w": np.array([0.3])}
        state = AdamState(lr=0.01)
        # independent scalar recurrences
        w, m, v = 0.3, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            adam_step(params, {"w": np.array([g])}, state)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mh = m / (1 - 0.9**t)
            vh = v / (1 - 0.999**t)
            w -= 0.01 * mh / (np.sqrt(vh) + 1e-8)
            assert abs(params["w"][0] - w) < 1e-12


class TestClip:
    def test_below_threshold_unchanged(self):
        grads = {"a": np.array([0.3, 0.4])}
        clip_global_norm(grads, 1.0)
        assert np.array_equal(grads["a"], [0.3, 0.4])

    def test_three_four_scales_to_unit(self):
        grads = {"a": np.array([3.0, 4.0])}
        clip_global_norm(grads, 1.0)
        assert np.allclose(grads["a"], [0.6, 0.8])

    def test_post_clip_norm_and_no_amplification(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            grads = {k: rng.normal(size=rng.integers(1, 6)) * rng.uniform(0, 3)
                     for k in "abc"}
            before = {k: g.copy() for k, g in grads.items()}
            pre = global_norm(grads)
            clip_global_norm(grads, 1.0)
            post = global_norm(grads)
            assert abs(post - min(pre, 1.0)) < 1e-12
            for k in grads:
                assert np.all(np.abs(grads[k]) <= np.abs(before[k]) + 1e-15)
