import dataclasses

import numpy as np
import pytest
from scipy.integrate import trapezoid

from hyco.core import Region, make_rng, sample_uniform_points
from hyco.nn import forward
from hyco.problems import gray_scott_problem, helmholtz_problem
from hyco.trainer import (
    HISTORY_COLUMNS,
    HycoConfig,
    TrainingError,
    check_stopping,
    data_loss,
    ghost_points,
    interaction_loss_mc,
    physical_gradient,
    run_baseline,
    synthetic_gradient,
    train,
)


def small_helmholtz(region="q2", seed=0):
    return helmholtz_problem(n=16, region=region, M=25, data_seed=seed, init_seed=seed, hidden_layers=(16, 16))


def small_gray_scott(seed=0):
    return gray_scott_problem(n=8, n_steps=60, T=24.0, M=200, data_seed=seed, init_seed=seed,
                              snapshot_stride=5, hidden_layers=(16, 16))


class TestDataLoss:
    def test_examples(self):
        assert data_loss([5.0], [0.0])[0] == 25.0
        assert data_loss([[3.0, 4.0]], [[0.0, 0.0]])[0] == 25.0
        assert data_loss([3.0, 4.0], [0.0, 0.0])[0] == 12.5
        value, grad = data_loss([1.0, 2.0], [1.0, 2.0])
        assert value == 0 and np.all(grad == 0)

    def test_gradient(self):
        pred = np.array([[1.0], [3.0]])
        _, g = data_loss(pred, np.zeros((2, 1)))
        assert np.array_equal(g, [[1.0], [3.0]])

    def test_regularization_and_errors(self):
        assert data_loss([1.0], [0.0], np.array([2.0]), reg=0.5)[0] == 1.0 + 0.5 * 4
        with pytest.raises(ValueError):
            data_loss(np.zeros(0), np.zeros(0))
        with pytest.raises(ValueError):
            data_loss(np.zeros((2, 1)), np.zeros((2, 2)))


class TestInteractionEstimator:
    def test_constant_gap(self):
        syn = np.full((7, 2), 1.5)
        phy = np.full((7, 2), 1.0)
        value, gs, gp = interaction_loss_mc(syn, phy, 4.0)
        assert value == pytest.approx(4.0 * 2 * 0.25)
        assert np.allclose(gs, -gp)

    def test_identical_is_zero(self):
        a = np.random.default_rng(0).normal(size=(10, 1))
        value, gs, _ = interaction_loss_mc(a, a, 1.0)
        assert value == 0 and np.all(gs == 0)

    def test_rejects_mismatch(self):
        with pytest.raises(ValueError):
            interaction_loss_mc(np.zeros((3, 1)), np.zeros((4, 1)), 1.0)

    @staticmethod
    def gap(pts):
        return (np.sin(pts[:, 0]) * np.cos(pts[:, 1]) - 0.3 * pts[:, 0])[:, None]

    def dense_quadrature(self, region, n=801):
        x = np.linspace(region.x_min, region.x_max, n)
        y = np.linspace(region.y_min, region.y_max, n)
        X, Y = np.meshgrid(x, y)
        g2 = self.gap(np.column_stack([X.ravel(), Y.ravel()]))[:, 0].reshape(n, n) ** 2
        return trapezoid(trapezoid(g2, x, axis=1), y)

    def test_large_sample_matches_quadrature(self):
        r = Region(-np.pi, np.pi, -np.pi, np.pi)
        pts = sample_uniform_points(r, 20_000, 5)
        value, _, _ = interaction_loss_mc(self.gap(pts), np.zeros((len(pts), 1)), r.area)
        assert value == pytest.approx(self.dense_quadrature(r), rel=0.05)


class TestStopping:
    def test_examples(self):
        assert not check_stopping([1.0, 1.0], 1e-4, window=2)
        assert check_stopping([1.0, 1.0, 1.0], 1e-4, window=2)
        assert not check_stopping([1.0, 1.0, 1.1], 1e-4, window=2)
        assert check_stopping([5.0, 1.0, 1.00001, 1.0], 1e-4, window=2)
        assert check_stopping([0.0, 0.0], 1e-4, window=1)

    def test_window_must_be_full(self):
        h = [1.0] * 10
        assert not check_stopping(h, 1e-4, window=10)
        assert check_stopping(h + [1.0], 1e-4, window=10)

    def test_single_step_examples(self):
        assert check_stopping([1.0, 1.001], 0.01, window=1)
        assert not check_stopping([2.0 ** i for i in range(12)], 0.01, window=1)
        assert not check_stopping([2.0 ** i for i in range(12)], 0.01)


class TestGradients:
    def test_zero_interaction_when_models_agree(self):
        p = small_helmholtz()
        cfg = HycoConfig(beta=0.0, alpha=0.0)
        lam = p.lambda_init
        ghosts = ghost_points(cfg, p, 0)
        phy = p.model.predict(lam, ghosts)
        idx = np.arange(len(p.dataset))
        g, *_ = physical_gradient(cfg, p, lam, phy, idx, ghosts)
        assert np.all(g == 0)

    def test_synthetic_gradient_vs_fd(self):
        p = small_helmholtz()
        cfg = HycoConfig(alpha=0.7, interaction_weight=0.3, H=50)
        from hyco.nn import init_params
        theta = init_params(p.nn_config)
        ghosts = ghost_points(cfg, p, 3)
        phy = p.model.predict(p.lambda_init, ghosts)
        idx = np.arange(len(p.dataset))
        grad, *_ = synthetic_gradient(cfg, p, theta, phy, idx, ghosts)

        def L2(th):
            _, Ls, Li = synthetic_gradient(cfg, p, th, phy, idx, ghosts)
            return cfg.alpha * Ls + cfg.interaction_weight * Li

        flat = theta.flat()
        g = grad.flat()
        chosen = make_rng(1).choice(flat.size, 20, replace=False)
        for i in chosen:
            e = np.zeros_like(flat)
            e[i] = 1e-6
            fd = (L2(theta.from_flat(flat + e)) - L2(theta.from_flat(flat - e))) / 2e-6
            assert g[i] == pytest.approx(fd, rel=1e-4, abs=1e-9)

    def test_physical_gradient_vs_fd(self):
        p = small_helmholtz()
        cfg = HycoConfig(beta=1.3, interaction_weight=0.4, H=40)
        from hyco.nn import init_params
        theta = init_params(p.nn_config)
        ghosts = ghost_points(cfg, p, 1)
        syn = forward(theta, ghosts)
        idx = np.arange(len(p.dataset))
        lam = p.lambda_init
        g, *_ = physical_gradient(cfg, p, lam, syn, idx, ghosts)

        def L1(l):
            _, Lp, Li, _ = physical_gradient(cfg, p, l, syn, idx, ghosts)
            return cfg.beta * Lp + cfg.interaction_weight * Li

        fd = np.array([(L1(lam + 1e-6 * e) - L1(lam - 1e-6 * e)) / 2e-6 for e in np.eye(6)])
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-9)

    def test_gray_scott_step_moves_toward_truth(self):
        p = small_gray_scott()
        cfg = HycoConfig(interaction_weight=0.0)
        idx = np.arange(len(p.dataset))
        ghosts = ghost_points(cfg, p, 0)
        g, *_ = physical_gradient(cfg, p, p.lambda_init, np.zeros((cfg.H, 2)), idx, ghosts)
        # both diffusivities start below truth, so descent must increase them
        assert np.all(p.lambda_init < p.lambda_true)
        assert np.all(g < 0)


class TestTrain:
    def test_zero_iterations(self):
        p = small_helmholtz()
        r = train(HycoConfig(max_iters=0), p)
        assert len(r.history) == 0 and np.array_equal(r.lam, p.model.project(p.lambda_init))

    def test_history_shape_and_csv(self, tmp_path):
        p = small_helmholtz()
        r = train(HycoConfig(max_iters=5, H=30, metrics_every=2), p)
        assert len(r.history) == 5 and len(r.history.lambdas) == 5
        assert [m is not None for m in r.history.metrics] == [True, False, True, False, True]
        r.history.write_csv(tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == ",".join(HISTORY_COLUMNS) and len(lines) == 6

    def test_decoupled_equals_baselines(self):
        p = small_helmholtz()
        cfg = HycoConfig(max_iters=15, H=30, interaction_weight=0.0)
        hy = train(cfg, p)
        nn = run_baseline("pure_nn", cfg, p)
        ph = run_baseline("physical_only", cfg, p)
        assert hy.lam.tobytes() == ph.lam.tobytes()
        assert all(a.tobytes() == b.tobytes() for a, b in zip(hy.theta.arrays(), nn.theta.arrays()))
        assert [b.L_phy for b in hy.history.losses] == [b.L_phy for b in ph.history.losses]
        assert [b.L_syn for b in hy.history.losses] == [b.L_syn for b in nn.history.losses]

    def test_coupling_changes_the_trajectory(self):
        p = small_helmholtz()
        a = train(HycoConfig(max_iters=5, H=30, interaction_weight=0.0), p)
        b = train(HycoConfig(max_iters=5, H=30, interaction_weight=1.0), p)
        assert not np.array_equal(a.lam, b.lam)

    def test_schedules_differ(self):
        p = small_helmholtz()
        gs = train(HycoConfig(max_iters=4, H=30), p)
        jc = train(HycoConfig(max_iters=4, H=30, update_schedule="jacobi"), p)
        assert not np.array_equal(gs.theta.flat(), jc.theta.flat())

    def test_loss_scaling_invariance(self):
        # Adam is invariant to a common positive rescaling of L1 and L2, up to its epsilon
        p = small_helmholtz()
        base = HycoConfig(max_iters=8, H=30, alpha=1.0, beta=1.0, interaction_weight=0.5)
        scaled = dataclasses.replace(base, alpha=10.0, beta=10.0, interaction_weight=5.0)
        a, b = train(base, p), train(scaled, p)
        assert np.allclose(a.lam, b.lam, rtol=1e-6, atol=1e-8)

    def test_determinism(self, tmp_path):
        p = small_helmholtz()
        cfg = HycoConfig(max_iters=6, H=30)
        train(cfg, p).history.write_csv(tmp_path / "a.csv")
        train(cfg, small_helmholtz()).history.write_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_stopping_records_stationarity(self):
        p = small_helmholtz()
        r = train(HycoConfig(max_iters=50, H=30, stop_tol=10.0, stop_window=3), p)
        assert r.history.stop_iter == 3 and len(r.history) == 4
        assert set(r.history.stationarity) == {"grad_lambda", "grad_theta"}
        assert r.history.metrics[-1] is not None

    def test_no_stopping_without_coupling(self):
        p = small_helmholtz()
        r = train(HycoConfig(max_iters=6, H=30, stop_tol=10.0, stop_window=2, interaction_weight=0.0), p)
        assert r.history.stop_iter is None and len(r.history) == 6

    def test_failure_keeps_history(self):
        p = small_gray_scott()
        # a huge plain step throws D far past the explicit stability limit;
        # under Jacobi the bad parameters are first simulated in iteration 1
        cfg = HycoConfig(max_iters=5, H=30, lambda_optimizer="plain_sgd", lr_lambda=1e12,
                         update_schedule="jacobi")
        with pytest.raises(TrainingError) as info:
            train(cfg, p)
        assert len(info.value.history) == 1
        assert info.value.lam is not None

    def test_minibatch(self):
        p = small_helmholtz()
        r = train(HycoConfig(max_iters=3, H=30, batch_size=10), p)
        assert len(r.history) == 3

    def test_gray_scott_smoke(self):
        p = small_gray_scott()
        r = train(HycoConfig(max_iters=3, H=50, lr_lambda=0.05), p)
        assert r.lam.shape == (2,) and np.isfinite(r.history.metrics[-1]["e_p"])

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            HycoConfig(H=0)
        with pytest.raises(ValueError):
            HycoConfig(update_schedule="random")
        with pytest.raises(ValueError):
            train(HycoConfig(), small_helmholtz(), method="pinn")
