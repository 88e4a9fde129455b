import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from localgen import learner as Lr
from localgen.dataset import (Dataset, SampleSet, Trajectory, build_samples, draw_initial, split_hypermodel,
                              split_time_independent)
from localgen.learner import AdamState, HyperMLP, LinearPropagator, TrainConfig

DT = 0.01


def planted_generator():
    L = np.zeros((4, 4))
    L[1, 2], L[2, 1] = -2.0, 2.0
    L[1:, 1:] -= 0.1 * np.eye(3)
    L[3, 0], L[3, 3] = 0.05, -0.15
    return L


def synthetic_trajectories(step_matrix, n, sampler="ball", seed=0, steps=1000):
    out = []
    for i in range(n):
        vs = [np.array([1.0, *draw_initial(sampler, seed, i)])]
        for k in range(steps):
            vs.append(step_matrix(k * DT) @ vs[-1])
        out.append(Trajectory(np.arange(steps + 1) * DT, np.array(vs), traj_id=i))
    return out


@pytest.fixture(scope="module")
def fixed_map_data():
    M = expm(planted_generator() * DT)
    ds = split_time_independent(build_samples(synthetic_trajectories(lambda t: M, 100)))
    ds.metadata["T"] = 10.0
    return M, ds


def random_batch(rng, n=16):
    v = np.c_[np.ones(n), rng.uniform(-0.5, 0.5, (n, 3))]
    vn = np.c_[np.ones(n), rng.uniform(-0.5, 0.5, (n, 3))]
    return v, vn, rng.uniform(0, 10, n)


def finite_difference(model, v, vn, t, h=1e-5):
    p = model.params
    g = np.empty_like(p)
    for k in range(p.size):
        old = p[k]
        p[k] = old + h
        up = model.loss(v, vn, t)
        p[k] = old - h
        down = model.loss(v, vn, t)
        p[k] = old
        g[k] = (up - down) / (2 * h)
    return g


def relative_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


class TestForward:
    def test_identity(self):
        v = np.array([1.0, 0.2, -0.3, 0.4])
        np.testing.assert_array_equal(Lr.linear_forward(LinearPropagator(), v), v)
        np.testing.assert_array_equal(Lr.linear_forward(LinearPropagator(np.eye(4) + DT * 0.0), v), v)

    def test_physical_first_row_keeps_v0(self):
        rng = np.random.default_rng(0)
        M = rng.normal(size=(4, 4))
        M[0] = [1, 0, 0, 0]
        out = Lr.linear_forward(LinearPropagator(M), [1.0, 0.1, 0.2, 0.3])
        assert out[0] == 1.0

    def test_no_renormalisation(self):
        out = Lr.linear_forward(LinearPropagator(2 * np.eye(4)), [1.0, 0.5, 0, 0])
        np.testing.assert_array_equal(out, [2.0, 1.0, 0, 0])

    def test_zero_output_layer(self):
        net = HyperMLP(8, init="zero")
        net.layers[3][0][...] = 0
        net.layers[3][1][...] = 0
        np.testing.assert_array_equal(Lr.hyper_forward(net, np.linspace(0, 20, 7)), 0.0)

    def test_identity_offset(self):
        net = HyperMLP(8, init="identity")
        np.testing.assert_array_equal(Lr.hyper_forward(net, 3.0), np.eye(4))

    def test_continuity_and_finiteness(self):
        net = HyperMLP(16, seed=1)
        net.params[:] = np.random.default_rng(1).normal(scale=0.3, size=net.params.size)
        t = np.linspace(0, 20, 401)
        M = Lr.hyper_forward(net, t)
        assert np.isfinite(M).all()
        d = [np.abs(Lr.hyper_forward(net, 5.0 + dlt) - Lr.hyper_forward(net, 5.0)).max()
             for dlt in (1e-2, 1e-4, 1e-6)]
        assert d[0] > d[1] > d[2] and d[2] < 1e-6

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            Lr.hyper_forward(HyperMLP(4), -1.0)

    def test_architecture(self):
        net = HyperMLP(32)
        shapes = [W.shape for W, _ in net.layers]
        assert shapes == [(1, 32), (32, 32), (32, 32), (32, 16)]


class TestLoss:
    def test_three_four_five(self):
        batch = SampleSet.from_arrays([[1, 0, 0, 0]], [[1, -0.3, -0.4, 0]], [0.0])
        assert Lr.loss_linear(LinearPropagator(), batch) == pytest.approx(0.5)

    def test_perfect_model(self, fixed_map_data):
        M, ds = fixed_map_data
        assert Lr.loss_linear(LinearPropagator(M), ds.train) < 1e-14

    def test_permutation_invariance(self):
        rng = np.random.default_rng(2)
        v, vn, t = random_batch(rng, 50)
        m = LinearPropagator(rng.normal(size=(4, 4)))
        perm = rng.permutation(50)
        a = Lr.loss_linear(m, SampleSet.from_arrays(v, vn, t))
        b = Lr.loss_linear(m, SampleSet.from_arrays(v[perm], vn[perm], t[perm]))
        assert a == pytest.approx(b, rel=1e-14)

    def test_sample_list_input(self):
        rng = np.random.default_rng(3)
        v, vn, t = random_batch(rng, 5)
        s = SampleSet.from_arrays(v, vn, t)
        m = LinearPropagator(rng.normal(size=(4, 4)))
        assert Lr.loss_linear(m, [s[i] for i in range(5)]) == Lr.loss_linear(m, s)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            Lr.loss_linear(LinearPropagator(), [])

    def test_constant_hypermodel_matches_linear(self):
        rng = np.random.default_rng(4)
        M = np.eye(4) + 0.05 * rng.normal(size=(4, 4))
        net = HyperMLP(8, init="identity")
        W, b = net.layers[3]
        W[...] = 0
        b[...] = (M - np.eye(4)).ravel()
        batch = SampleSet.from_arrays(*random_batch(rng, 40))
        assert Lr.loss_hyper(net, batch) == pytest.approx(Lr.loss_linear(LinearPropagator(M), batch), rel=1e-14)

    def test_hypermodel_exact_map_zero_loss(self):
        M = expm(planted_generator() * DT)
        net = HyperMLP(4, init="zero")
        net.layers[3][0][...] = 0
        net.layers[3][1][...] = M.ravel()
        trs = synthetic_trajectories(lambda t: M, 2, steps=20)
        assert Lr.loss_hyper(net, build_samples(trs)) < 1e-15


class TestGradients:
    def test_single_sample_analytic(self):
        rng = np.random.default_rng(5)
        M = rng.normal(size=(4, 4))
        v = np.array([[1.0, 0.2, -0.1, 0.3]])
        vn = np.array([[1.0, 0.0, 0.4, -0.2]])
        r = M @ v[0] - vn[0]
        g = Lr.backprop_and_grad(LinearPropagator(M), SampleSet.from_arrays(v, vn, [0.0]))
        np.testing.assert_allclose(g.reshape(4, 4), np.outer(r / np.linalg.norm(r), v[0]), rtol=1e-14)

    def test_zero_residual_zero_gradient(self):
        v = np.array([[1.0, 0.2, -0.1, 0.3]])
        g = Lr.backprop_and_grad(LinearPropagator(), SampleSet.from_arrays(v, v, [0.0]))
        np.testing.assert_array_equal(g, 0.0)
        net = HyperMLP(4, init="identity")
        net.layers[3][0][...] = 0
        net.layers[3][1][...] = 0
        np.testing.assert_array_equal(Lr.backprop_and_grad(net, SampleSet.from_arrays(v, v, [1.0])), 0.0)

    @pytest.mark.parametrize("squared", [False, True])
    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed, squared):
        rng = np.random.default_rng(seed)
        v, vn, t = random_batch(rng)
        lin = LinearPropagator(rng.normal(size=(4, 4)))
        net = HyperMLP(8, seed=seed, init="zero")
        net.params[:] = rng.normal(scale=0.5, size=net.params.size)
        for m in (lin, net):
            a = m.loss_and_grad(v, vn, t, squared)[1]
            f = finite_difference_sq(m, v, vn, t) if squared else finite_difference(m, v, vn, t)
            assert relative_error(a, f).max() <= 1e-5

    def test_loss_and_grad_agree_on_loss(self):
        rng = np.random.default_rng(9)
        v, vn, t = random_batch(rng)
        net = HyperMLP(8, seed=2)
        assert net.loss_and_grad(v, vn, t)[0] == pytest.approx(net.loss(v, vn, t), rel=1e-13)


def finite_difference_sq(model, v, vn, t, h=1e-5):
    p = model.params
    g = np.empty_like(p)
    for k in range(p.size):
        old = p[k]
        p[k] = old + h
        up = model.loss(v, vn, t, squared=True)
        p[k] = old - h
        down = model.loss(v, vn, t, squared=True)
        p[k] = old
        g[k] = (up - down) / (2 * h)
    return g


class TestAdam:
    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        st_ = AdamState.zeros_like(p)
        Lr.adam_step(st_, p, np.zeros(2))
        np.testing.assert_array_equal(p, [1.0, -2.0])

    def test_hand_computed_steps(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = np.array([1.0])
        s = AdamState.zeros_like(p, lr, (b1, b2), eps)
        Lr.adam_step(s, p, np.array([0.5]))
        # m = 0.05, v = 0.00025; m_hat = 0.5, v_hat = 0.25
        assert p[0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8), rel=1e-15)
        p1 = p[0]
        Lr.adam_step(s, p, np.array([-1.0]))
        m = 0.9 * 0.05 - 0.1
        v = 0.999 * 0.00025 + 0.001
        m_hat = m / (1 - 0.81)
        v_hat = v / (1 - 0.999 ** 2)
        assert p[0] == pytest.approx(p1 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8), rel=1e-14)
        assert s.step == 2

    def test_shape_mismatch(self):
        p = np.zeros(3)
        with pytest.raises(ValueError):
            Lr.adam_step(AdamState.zeros_like(p), p, np.zeros(4))

    def test_deterministic(self, fixed_map_data):
        _, ds = fixed_map_data
        cfg = TrainConfig("linear", epochs=1, batches_per_epoch=50)
        a, ha = Lr.train("linear", ds, cfg)
        b, hb = Lr.train("linear", ds, cfg)
        assert a.params.tobytes() == b.params.tobytes()
        assert ha.train_loss == hb.train_loss


class TestTraining:
    def test_defaults(self):
        lin, hyp = TrainConfig("linear"), TrainConfig("hyper")
        assert (lin.batch_size, lin.batches_per_epoch, lin.epochs) == (256, 512, 5)
        assert (hyp.batch_size, hyp.batches_per_epoch, hyp.epochs) == (256, 256, 500)
        assert lin.lr == 1e-3 and lin.betas == (0.9, 0.999) and lin.eps == 1e-8
        assert hyp.hidden == 64

    def test_recovers_fixed_map(self, fixed_map_data):
        M, ds = fixed_map_data
        model, hist = Lr.train("linear", ds, TrainConfig("linear"))
        assert np.abs(model.M - M).max() <= 1e-3
        assert len(hist.val_loss) == 5

    def test_oracle_recovery_small_validation_loss(self, fixed_map_data):
        # Adam's jitter floor scales with the step size, so this uses a smaller one
        M, ds = fixed_map_data
        model, hist = Lr.train("linear", ds, TrainConfig("linear", lr=1e-5, epochs=20))
        assert min(hist.val_loss) <= 1e-6
        assert np.abs(model.M - M).max() <= 1e-3

    def test_best_on_validation_is_returned(self, fixed_map_data):
        _, ds = fixed_map_data
        model, hist = Lr.train("linear", ds, TrainConfig("linear", epochs=3, batches_per_epoch=20))
        assert Lr.loss_linear(model, ds.val) == pytest.approx(min(hist.val_loss), rel=1e-12)
        assert hist.best_epoch == int(np.argmin(hist.val_loss))

    def test_fixed_point_data(self):
        v = np.tile([1.0, 0.3, -0.2, 0.1], (50, 1))
        ds = Dataset(SampleSet.from_arrays(v, v, np.zeros(50)), SampleSet.from_arrays(v, v, np.zeros(50)))
        model, hist = Lr.train("linear", ds, TrainConfig("linear", epochs=2, batches_per_epoch=10))
        assert hist.val_loss[-1] <= 1e-6

    def test_empty_dataset(self):
        empty = SampleSet.from_arrays(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0))
        with pytest.raises(ValueError):
            Lr.train("linear", Dataset(empty, empty))

    def test_hypermodel_learns_linear_drift(self):
        A = np.zeros((4, 4))
        A[1, 2], A[2, 1] = -0.3, 0.3
        A[1, 1] = A[3, 3] = -0.05
        step = lambda t: np.eye(4) + DT * t * A
        ds = split_hypermodel(synthetic_trajectories(step, 100), synthetic_trajectories(step, 20, "diagonal"))
        net, _ = Lr.train("hyper", ds, TrainConfig("hyper", epochs=20), T_train=10.0)
        times = np.arange(1001) * DT
        L = Lr.generator_series(net, times)
        slope = np.polyfit(times, L.reshape(len(times), 16), 1)[0].reshape(4, 4)
        assert np.linalg.norm(slope - A) <= 0.05 * np.linalg.norm(A)

    def test_time_constant_hypermodel_matches_linear(self, fixed_map_data):
        _, ds = fixed_map_data
        _, hl = Lr.train("linear", ds, TrainConfig("linear"))
        _, hh = Lr.train("hyper", ds, TrainConfig("hyper", epochs=20))
        assert min(hh.val_loss) <= 1.1 * min(hl.val_loss)


class TestGenerator:
    def test_identity(self):
        np.testing.assert_array_equal(Lr.extract_generator(np.eye(4), 0.01), 0.0)

    def test_planted(self):
        L0 = planted_generator()
        np.testing.assert_allclose(Lr.extract_generator(np.eye(4) + 0.01 * L0, 0.01), L0, rtol=1e-12,
                                   atol=1e-12)

    @given(st.lists(st.floats(-2, 2), min_size=16, max_size=16))
    def test_round_trip(self, entries):
        M = np.array(entries).reshape(4, 4)
        L = Lr.extract_generator(M, 0.01)
        np.testing.assert_allclose(Lr.extract_generator(np.eye(4) + 0.01 * L, 0.01), L, atol=1e-10)

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            Lr.extract_generator(np.eye(4), 0.0)


class TestRollout:
    def test_identity_constant(self):
        v0 = np.array([1.0, 0.1, 0.2, 0.3])
        _, out = Lr.rollout(LinearPropagator(), v0, 100, DT)
        np.testing.assert_array_equal(out, np.tile(v0, (101, 1)))

    def test_matrix_power(self):
        M = expm(planted_generator() * DT)
        v0 = np.array([1.0, 0.3, -0.2, 0.5])
        _, out = Lr.rollout(LinearPropagator(M), v0, 500, DT)
        for n in (1, 10, 100, 500):
            assert np.abs(out[n] - np.linalg.matrix_power(M, n) @ v0).max() <= 1e-8 * n

    def test_full_horizon_length(self):
        times, out = Lr.rollout(LinearPropagator(), [1, 0, 0, 0], 2000, DT)
        assert len(out) == 2001 and times[-1] == pytest.approx(20.0)

    def test_hypermodel_uses_step_time(self):
        net = HyperMLP(4, init="identity")
        net.params[:] = np.random.default_rng(0).normal(scale=0.01, size=net.params.size)
        v0 = np.array([1.0, 0.2, 0.1, 0.0])
        times, out = Lr.rollout(net, v0, 30, DT)
        v = v0
        for n in range(30):
            v = Lr.hyper_forward(net, times[n]) @ v
        np.testing.assert_allclose(out[-1], v, rtol=1e-13)

    def test_divergence(self):
        with pytest.raises(Lr.DivergenceError) as err:
            Lr.rollout(LinearPropagator(1e200 * np.eye(4)), [1, 0, 0, 0], 10, DT)
        assert err.value.step == 2

    def test_steps_positive(self):
        with pytest.raises(ValueError):
            Lr.rollout(LinearPropagator(), [1, 0, 0, 0], 0, DT)


class TestModelFiles:
    def test_round_trip(self, tmp_path):
        net = HyperMLP(8, T_train=7.5, seed=3)
        net.params[:] = np.random.default_rng(3).normal(size=net.params.size)
        Lr.save_model(net, tmp_path / "h.txt", {"dt": 0.01})
        back, head = Lr.load_model(tmp_path / "h.txt")
        assert back.params.tobytes() == net.params.tobytes()
        assert back.T_train == 7.5 and head["dt"] == "0.01"
        lin = LinearPropagator(np.random.default_rng(4).normal(size=(4, 4)))
        Lr.save_model(lin, tmp_path / "l.txt")
        assert Lr.load_model(tmp_path / "l.txt")[0].params.tobytes() == lin.params.tobytes()

    def test_corrupted(self, tmp_path):
        Lr.save_model(LinearPropagator(), tmp_path / "l.txt")
        text = (tmp_path / "l.txt").read_text().splitlines()
        (tmp_path / "l.txt").write_text("\n".join(text[:-1]) + "\n")
        with pytest.raises(ValueError):
            Lr.load_model(tmp_path / "l.txt")
