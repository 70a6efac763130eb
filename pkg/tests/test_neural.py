import numpy as np
import pytest

from mpclearn.dataset import Dataset, SampleTriplet
from mpclearn.neural import (
    MlpArchitecture,
    MlpParams,
    StopReason,
    TrainConfig,
    forward,
    init_params,
    input_jacobian,
    load_params,
    loss_gradient,
    save_params,
    sobolev_loss,
    train,
    write_loss_history,
)

ARCH = MlpArchitecture(2, (7, 5), 1)


def random_triplets(rng, count, n=2, m=1):
    return [
        SampleTriplet(rng.normal(size=n), rng.normal(size=m), rng.normal(size=(m, n)))
        for _ in range(count)
    ]


def realizable_dataset(params, rng, count):
    """Triplets produced by the network itself: a zero-loss target exists."""
    n = params.layer_dims[0]
    samples = [
        SampleTriplet(x, forward(params, x), input_jacobian(params, x))
        for x in rng.uniform(-2, 2, size=(count, n))
    ]
    return Dataset(
        problem_hash="synthetic", seed=0, kind="train",
        state_dim=n, input_dim=params.layer_dims[-1], samples=samples,
    )


class TestArchitecture:
    def test_needs_hidden_layer(self):
        with pytest.raises(ValueError):
            MlpArchitecture(2, (), 1)

    def test_positive_widths(self):
        with pytest.raises(ValueError):
            MlpArchitecture(2, (4, 0), 1)

    def test_layer_dims(self):
        assert ARCH.layer_dims == (2, 7, 5, 1)


class TestInitParams:
    def test_deterministic_in_seed(self):
        assert init_params(ARCH, 3) == init_params(ARCH, 3)

    def test_seeds_differ(self):
        assert init_params(ARCH, 3) != init_params(ARCH, 4)

    def test_biases_zero(self):
        params = init_params(ARCH, 0)
        assert all(np.all(b == 0.0) for b in params.biases)

    def test_weight_bounds(self):
        params = init_params(ARCH, 0)
        for W in params.weights:
            bound = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            assert np.all(np.abs(W) <= bound)

    def test_flat_round_trip(self):
        params = init_params(ARCH, 9)
        again = MlpParams.from_flat(ARCH, params.to_flat())
        assert params == again


class TestForward:
    def test_zero_params_zero_output(self):
        zero = MlpParams([np.zeros((3, 2)), np.zeros((1, 3))], [np.zeros(3), np.zeros(1)])
        assert np.array_equal(forward(zero, [5.0, -3.0]), [0.0])

    def test_hand_computed_single_unit(self):
        params = MlpParams([[[2.0]], [[3.0]]], [[-1.0], [0.5]])
        assert forward(params, np.array([1.0]))[0] == pytest.approx(3.5)

    def test_dead_hidden_layer_returns_bias(self):
        params = MlpParams(
            [np.array([[1.0, 0.0]]), np.array([[4.0]])],
            [np.array([-10.0]), np.array([0.25])],
        )
        assert forward(params, [1.0, 1.0])[0] == pytest.approx(0.25)

    def test_batched_forward_matches_loop(self):
        params = init_params(ARCH, 1)
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 2))
        batched = forward(params, X)
        looped = np.stack([forward(params, x) for x in X])
        assert np.allclose(batched, looped)


class TestInputJacobian:
    def test_dead_network_zero_jacobian(self):
        params = MlpParams(
            [np.array([[1.0, 0.0]]), np.array([[4.0]])],
            [np.array([-10.0]), np.array([0.0])],
        )
        assert np.array_equal(input_jacobian(params, [0.0, 0.0]), [[0.0, 0.0]])

    def test_all_active_is_weight_product(self):
        W1 = np.array([[0.5, 0.25], [0.5, -0.125]])
        W2 = np.array([[1.0, 2.0]])
        params = MlpParams([W1, W2], [np.array([10.0, 10.0]), np.array([0.0])])
        assert np.allclose(input_jacobian(params, [0.1, 0.1]), W2 @ W1)

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(5)
        checked = 0
        for trial in range(100):
            params = init_params(ARCH, trial)
            x = rng.normal(size=2)
            if _near_activation_boundary(params, x):
                continue
            J = input_jacobian(params, x)
            fd = _fd_jacobian(params, x)
            assert np.max(np.abs(J - fd)) < 1e-6 * max(1.0, np.max(np.abs(fd)))
            checked += 1
        assert checked >= 90

    def test_local_affine_exactness(self):
        # inside one activation pattern the network is exactly affine
        rng = np.random.default_rng(8)
        for trial in range(20):
            params = init_params(MlpArchitecture(3, (9, 6), 2), trial)
            x = rng.normal(size=3)
            J = input_jacobian(params, x)
            delta = 1e-7 * rng.normal(size=3)
            lhs = forward(params, x + delta) - forward(params, x)
            assert np.max(np.abs(lhs - J @ delta)) < 1e-9


def _fd_jacobian(params, x, step=1e-6):
    n = x.size
    m = params.layer_dims[-1]
    fd = np.zeros((m, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        fd[:, j] = (forward(params, x + e) - forward(params, x - e)) / (2 * step)
    return fd


def _near_activation_boundary(params, x, margin=1e-4):
    a = np.asarray(x, dtype=float)
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = W @ a + b
        if l == last:
            break
        if np.any(np.abs(z) < margin):
            return True
        a = np.maximum(z, 0.0)
    return False


class TestSobolevLoss:
    def test_exact_affine_fit_is_zero(self):
        W1 = np.array([[1.0, 0.0], [0.0, 1.0]])
        W2 = np.array([[2.0, -1.0]])
        params = MlpParams([W1, W2], [np.array([5.0, 5.0]), np.array([0.0])])
        x = np.array([0.5, -0.25])
        triplet = SampleTriplet(x, forward(params, x), input_jacobian(params, x))
        assert sobolev_loss(params, [triplet], gamma=3.0) == pytest.approx(0.0, abs=1e-18)

    def test_gamma_zero_is_value_error_only(self):
        rng = np.random.default_rng(2)
        params = init_params(ARCH, 0)
        batch = random_triplets(rng, 6)
        expected = sum(float(np.sum((forward(params, s.x) - s.u) ** 2)) for s in batch)
        assert sobolev_loss(params, batch, 0.0) == pytest.approx(expected, rel=1e-12)

    def test_hand_case(self):
        zero = MlpParams([np.zeros((3, 1)), np.zeros((1, 3))], [np.zeros(3), np.zeros(1)])
        triplet = SampleTriplet(np.array([0.7]), np.array([1.0]), np.array([[2.0]]))
        assert sobolev_loss(zero, [triplet], gamma=10.0) == pytest.approx(41.0)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            sobolev_loss(init_params(ARCH, 0), [], 1.0)


class TestLossGradient:
    def test_zero_at_global_minimum(self):
        params = init_params(ARCH, 6)
        rng = np.random.default_rng(1)
        batch = [
            SampleTriplet(x, forward(params, x), input_jacobian(params, x))
            for x in rng.normal(size=(5, 2))
        ]
        grad = loss_gradient(params, batch, gamma=2.0)
        assert np.max(np.abs(grad.to_flat())) < 1e-12

    def test_finite_difference_over_parameters(self):
        rng = np.random.default_rng(4)
        params = init_params(ARCH, 12)
        batch = random_triplets(rng, 4)
        gamma = 1.7
        grad = loss_gradient(params, batch, gamma).to_flat()
        theta = params.to_flat()
        step = 1e-6
        picks = rng.choice(theta.size, size=50, replace=False)
        for i in picks:
            up, down = theta.copy(), theta.copy()
            up[i] += step
            down[i] -= step
            fd = (
                sobolev_loss(MlpParams.from_flat(ARCH, up), batch, gamma)
                - sobolev_loss(MlpParams.from_flat(ARCH, down), batch, gamma)
            ) / (2 * step)
            assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_gamma_zero_matches_plain_backprop(self):
        # independent implementation of plain MSE backprop
        rng = np.random.default_rng(9)
        params = init_params(MlpArchitecture(2, (4,), 1), 3)
        batch = random_triplets(rng, 5)
        grad = loss_gradient(params, batch, 0.0)

        W1, W2 = params.weights
        b1, b2 = params.biases
        gW1 = np.zeros_like(W1)
        gb1 = np.zeros_like(b1)
        gW2 = np.zeros_like(W2)
        gb2 = np.zeros_like(b2)
        for s in batch:
            z1 = W1 @ s.x + b1
            a1 = np.maximum(z1, 0.0)
            out = W2 @ a1 + b2
            d2 = 2.0 * (out - s.u)
            gW2 += np.outer(d2, a1)
            gb2 += d2
            d1 = (W2.T @ d2) * (z1 > 0)
            gW1 += np.outer(d1, s.x)
            gb1 += d1
        assert np.allclose(grad.weights[0], gW1, atol=1e-12)
        assert np.allclose(grad.weights[1], gW2, atol=1e-12)
        assert np.allclose(grad.biases[0], gb1, atol=1e-12)
        assert np.allclose(grad.biases[1], gb2, atol=1e-12)


class TestTrain:
    def test_reaches_target_on_realizable_data(self):
        rng = np.random.default_rng(30)
        teacher = init_params(MlpArchitecture(2, (6, 6), 1), 77)
        ds = realizable_dataset(teacher, rng, 40)
        cfg = TrainConfig(gamma=0.0, seed=1, max_epochs=20_000, loss_target=0.01)
        report = train(ds, MlpArchitecture(2, (12, 12), 1), cfg)
        assert report.stop_reason is StopReason.TARGET_REACHED
        assert report.loss_history[-1] <= 0.01

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(31)
        teacher = init_params(MlpArchitecture(2, (4, 4), 1), 5)
        ds = realizable_dataset(teacher, rng, 20)
        cfg = TrainConfig(gamma=1.0, seed=2, max_epochs=30, loss_target=1e-12)
        a = train(ds, MlpArchitecture(2, (8, 8), 1), cfg)
        b = train(ds, MlpArchitecture(2, (8, 8), 1), cfg)
        assert a.final_params == b.final_params
        assert np.array_equal(a.loss_history, b.loss_history)
        assert a.epochs_run == b.epochs_run == 30
        assert a.stop_reason is StopReason.EPOCH_CAP

    def test_backends_agree(self):
        rng = np.random.default_rng(32)
        teacher = init_params(MlpArchitecture(2, (4, 4), 1), 6)
        ds = realizable_dataset(teacher, rng, 17)  # odd size: short last batch
        cfg = TrainConfig(gamma=2.0, seed=3, max_epochs=25, loss_target=1e-12)
        fast = train(ds, MlpArchitecture(2, (5, 3), 1), cfg, backend="numba")
        ref = train(ds, MlpArchitecture(2, (5, 3), 1), cfg, backend="numpy")
        assert np.max(np.abs(fast.final_params.to_flat() - ref.final_params.to_flat())) < 1e-9
        assert np.max(np.abs(fast.loss_history - ref.loss_history)) < 1e-9

    def test_loss_history_matches_reported_epochs(self):
        rng = np.random.default_rng(33)
        ds = realizable_dataset(init_params(MlpArchitecture(2, (4,), 1), 1), rng, 10)
        cfg = TrainConfig(gamma=0.5, seed=5, max_epochs=12, loss_target=1e-12)
        report = train(ds, MlpArchitecture(2, (4,), 1), cfg)
        assert len(report.loss_history) == report.epochs_run == 12
        assert np.all(np.isfinite(report.loss_history))

    def test_divergence_aborts_with_guidance(self):
        rng = np.random.default_rng(34)
        ds = realizable_dataset(init_params(MlpArchitecture(2, (4,), 1), 2), rng, 10)
        # absurd learning rate blows the parameters up
        cfg = TrainConfig(gamma=0.0, seed=1, max_epochs=50, learning_rate=1e200, loss_target=1e-12)
        with pytest.raises(RuntimeError, match="learning_rate"):
            train(ds, MlpArchitecture(2, (4,), 1), cfg)

    def test_requires_train_kind(self):
        rng = np.random.default_rng(35)
        ds = realizable_dataset(init_params(MlpArchitecture(2, (4,), 1), 3), rng, 6)
        ds.kind = "test"
        with pytest.raises(ValueError, match="train"):
            train(ds, MlpArchitecture(2, (4,), 1), TrainConfig())

    def test_trailing_average_loss_trend_is_downward(self):
        rng = np.random.default_rng(36)
        teacher = init_params(MlpArchitecture(2, (6, 6), 1), 11)
        ds = realizable_dataset(teacher, rng, 30)
        cfg = TrainConfig(gamma=1.0, seed=4, max_epochs=3000, loss_target=1e-12)
        report = train(ds, MlpArchitecture(2, (8, 8), 1), cfg)
        hist = report.loss_history
        window = 200
        head = hist[:window].mean()
        tail = hist[-window:].mean()
        assert tail < head

    def test_benchmark_training_stable_and_trending_down(self):
        # default hyperparameters on control-law data: loss history stays
        # finite and its trailing-window average decreases over the run
        from mpclearn.invariant import max_control_invariant
        from mpclearn.dataset import generate
        from mpclearn.mpc import two_dim_benchmark

        problem = two_dim_benchmark()
        inv = max_control_invariant(
            problem.X, problem.U_set, problem.system.A, problem.system.B
        )
        ds = generate(problem, inv.c_inf, 25, seed=606, kind="train")
        report = train(ds, MlpArchitecture(2, (16, 16), 1), TrainConfig(seed=607))
        hist = report.loss_history
        assert np.all(np.isfinite(hist))
        window = min(500, len(hist) // 4)
        assert hist[-window:].mean() < hist[:window].mean()


class TestSerialization:
    def test_params_round_trip_with_meta(self, tmp_path):
        params = init_params(ARCH, 21)
        path = tmp_path / "net.json"
        save_params(params, path, meta={"problem_hash": "abc", "gamma": 1.0})
        back, meta = load_params(path)
        assert back == params
        assert meta["problem_hash"] == "abc"

    def test_architecture_header_checked(self, tmp_path):
        import json

        params = init_params(ARCH, 21)
        path = tmp_path / "net.json"
        save_params(params, path)
        doc = json.loads(path.read_text())
        doc["hidden_widths"] = [7, 4]
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="architecture"):
            load_params(path)

    def test_loss_history_csv(self, tmp_path):
        path = tmp_path / "hist.csv"
        write_loss_history([1.5, 0.25], path)
        assert path.read_text() == "epoch,loss\n1,1.5\n2,0.25\n"
