"""Alternating two-player training of a physical model and a network.

The physical player minimises ``L1 = beta * L_phy + w_int * L_int`` over its
parameters, the synthetic player ``L2 = alpha * L_syn + w_int * L_int`` over
the network weights. ``L_int`` is estimated on ghost points freshly drawn each
iteration; both players see the same ghost set within an iteration.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import make_rng, sample_uniform_points
from .nn import AdamState, MLPParams, adam_step, backward, forward, init_params
from .problems import Problem

SCHEDULES = ("gauss_seidel", "jacobi")
METHODS = ("hyco", "pure_nn", "physical_only")
HISTORY_COLUMNS = ("iter", "L_phy", "L_syn", "L_int", "L1", "L2", "e_s_phy", "e_s_syn", "e_p")


@dataclass(frozen=True)
class HycoConfig:
    alpha: float = 1.0
    beta: float = 1.0
    interaction_weight: float = 1.0
    H: int = 200
    lr_theta: float = 1e-3
    lr_lambda: float = 1e-2
    max_iters: int = 1000
    stop_tol: float = 1e-4
    stop_window: int = 10
    seed_data: int = 0
    seed_ghost: int = 0
    seed_init: int = 0
    update_schedule: str = "gauss_seidel"
    lambda_optimizer: str = "adam"
    reg_lambda: float = 0.0
    reg_theta: float = 0.0
    batch_size: int | None = None
    metrics_every: int = 1
    stationarity_tol: float = 1e-2

    def __post_init__(self):
        for name in ("alpha", "beta", "interaction_weight", "lr_theta", "lr_lambda", "reg_lambda", "reg_theta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.stop_tol <= 0 or self.stop_window < 1:
            raise ValueError("stop_tol must be positive and stop_window >= 1")
        if self.update_schedule not in SCHEDULES:
            raise ValueError(f"update_schedule must be one of {SCHEDULES}")
        if self.lambda_optimizer not in ("adam", "plain_sgd"):
            raise ValueError("lambda_optimizer must be 'adam' or 'plain_sgd'")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.metrics_every < 1:
            raise ValueError("metrics_every must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    L_phy: float
    L_syn: float
    L_int: float
    L1: float
    L2: float


@dataclass
class TrainHistory:
    losses: list[LossBreakdown] = field(default_factory=list)
    lambdas: list[np.ndarray] = field(default_factory=list)
    metrics: list[dict | None] = field(default_factory=list)
    stop_iter: int | None = None
    stationarity: dict | None = None
    wall_clock: float = 0.0
    method: str = "hyco"

    def __len__(self) -> int:
        return len(self.losses)

    @property
    def L_int(self) -> list[float]:
        return [b.L_int for b in self.losses]

    def rows(self) -> list[list[str]]:
        out = []
        # a failure between recording losses and metrics leaves metrics short
        metrics = self.metrics + [None] * (len(self.losses) - len(self.metrics))
        for k, (b, m) in enumerate(zip(self.losses, metrics)):
            m = m or {}
            vals = [b.L_phy, b.L_syn, b.L_int, b.L1, b.L2, m.get("e_s_phy"), m.get("e_s_syn"), m.get("e_p")]
            out.append([str(k)] + ["" if v is None or np.isnan(v) else repr(float(v)) for v in vals])
        return out

    def write_csv(self, path) -> None:
        """Row ``k`` holds losses at iterate k (on ghost set k) and metrics
        of the parameters produced by iteration k."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            w.writerows(self.rows())


@dataclass
class TrainResult:
    history: TrainHistory
    lam: np.ndarray
    theta: MLPParams


class TrainingError(RuntimeError):
    """Raised from ``train``; carries the history recorded up to the failure."""

    def __init__(self, message, history: TrainHistory, lam=None, theta=None):
        super().__init__(message)
        self.history = history
        self.lam = lam
        self.theta = theta


def data_loss(pred, obs, params=None, reg: float = 0.0):
    """Mean squared residual norm and its gradient in ``pred``.

    With ``reg > 0`` an L2 penalty ``reg * |params|^2`` is added to the value.
    """
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
    if obs.ndim == 1:
        obs = obs[:, None]
    if len(obs) == 0:
        raise ValueError("empty dataset")
    if pred.shape != obs.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match observations {obs.shape}")
    r = pred - obs
    M = len(obs)
    value = float(np.sum(r * r) / M)
    if reg > 0 and params is not None:
        value += reg * float(sum(np.sum(a * a) for a in _as_list(params)))
    return value, 2.0 * r / M


def interaction_loss_mc(syn, phy, domain_measure: float):
    """Ghost-point estimate ``|Omega| / H * sum |syn - phy|^2`` and its
    gradients in the synthetic and physical predictions."""
    syn = np.asarray(syn, dtype=np.float64)
    phy = np.asarray(phy, dtype=np.float64)
    if syn.shape != phy.shape:
        raise ValueError(f"prediction lists differ: {syn.shape} vs {phy.shape}")
    if domain_measure <= 0:
        raise ValueError("domain measure must be positive")
    H = len(syn)
    d = syn - phy
    value = float(domain_measure / H * np.sum(d * d))
    g = 2.0 * domain_measure / H * d
    return value, g, -g


def check_stopping(history: Sequence[float], eps: float, window: int = 10) -> bool:
    """True once the relative change of the last ``window`` consecutive steps
    all fall below ``eps``. A zero previous value counts as converged."""
    h = list(history)
    if len(h) < window + 1:
        return False
    for prev, cur in zip(h[-window - 1:-1], h[-window:]):
        if prev == 0:
            continue
        if abs(cur - prev) / abs(prev) >= eps:
            return False
    return True


def _as_list(p):
    if isinstance(p, MLPParams):
        return p.arrays()
    if isinstance(p, np.ndarray):
        return [p]
    return list(p)


def physical_gradient(config: HycoConfig, problem: Problem, lam, syn_ghost, data_idx, ghosts):
    """Losses at ``lam`` and the gradient of L1 in ``lam``.

    ``syn_ghost`` are the synthetic predictions at ``ghosts``: the only thing
    the physical player learns about the network.
    """
    ds = problem.dataset
    model = problem.model
    (phy_d, phy_g), vjp = model.evaluate(lam, [ds.points[data_idx], ghosts])
    L_phy, g_d = data_loss(phy_d, ds.observations[data_idx], lam, config.reg_lambda)
    L_int, _, g_phy = interaction_loss_mc(syn_ghost, phy_g, model.domain.measure)
    grads = [config.beta * g_d if config.beta > 0 else None,
             config.interaction_weight * g_phy if config.interaction_weight > 0 else None]
    grad = vjp(grads) if any(g is not None for g in grads) else np.zeros_like(lam)
    if config.reg_lambda > 0:
        grad = grad + 2.0 * config.reg_lambda * lam
    return grad, L_phy, L_int, phy_g


def synthetic_gradient(config: HycoConfig, problem: Problem, theta: MLPParams, phy_ghost, data_idx, ghosts):
    """Losses at ``theta`` and the gradient of L2 in the weights, with the
    physical predictions at ``ghosts`` held fixed."""
    ds = problem.dataset
    pts = ds.points[data_idx]
    syn_d = forward(theta, pts)
    L_syn, g_d = data_loss(syn_d, ds.observations[data_idx], theta, config.reg_theta)
    syn_g = forward(theta, ghosts)
    L_int, g_syn, _ = interaction_loss_mc(syn_g, phy_ghost, problem.model.domain.measure)
    if config.interaction_weight > 0:
        batch = np.concatenate([pts, ghosts])
        g_out = np.concatenate([config.alpha * g_d, config.interaction_weight * g_syn])
    else:
        batch, g_out = pts, config.alpha * g_d
    grad = backward(theta, batch, g_out)
    if config.reg_theta > 0:
        grad = grad.with_arrays([g + 2.0 * config.reg_theta * p for g, p in zip(grad.arrays(), theta.arrays())])
    return grad, L_syn, L_int


def _check_finite(name, grad, **context):
    arrs = _as_list(grad)
    if not all(np.all(np.isfinite(a)) for a in arrs):
        detail = ", ".join(f"{k}={v!r}" for k, v in context.items())
        raise FloatingPointError(f"non-finite {name} gradient ({detail})")


def physical_update(config: HycoConfig, problem: Problem, lam, opt_state: AdamState, syn_ghost,
                    data_idx, ghosts):
    """One optimizer step on L1 followed by projection onto admissible parameters."""
    grad, L_phy, L_int, phy_g = physical_gradient(config, problem, lam, syn_ghost, data_idx, ghosts)
    _check_finite("physical", grad, lam=lam, L_phy=L_phy, L_int=L_int)
    if config.lambda_optimizer == "adam":
        new, opt_state = adam_step(lam, grad, opt_state, config.lr_lambda)
    else:
        new = lam - config.lr_lambda * grad
    return problem.model.project(new), opt_state, (L_phy, L_int, phy_g)


def synthetic_update(config: HycoConfig, problem: Problem, theta: MLPParams, opt_state: AdamState, phy_ghost,
                     data_idx, ghosts):
    """One Adam step on L2."""
    grad, L_syn, L_int = synthetic_gradient(config, problem, theta, phy_ghost, data_idx, ghosts)
    _check_finite("synthetic", grad, L_syn=L_syn, L_int=L_int)
    theta, opt_state = adam_step(theta, grad, opt_state, config.lr_theta)
    return theta, opt_state, L_syn


def ghost_points(config: HycoConfig, problem: Problem, k: int) -> np.ndarray:
    return sample_uniform_points(problem.model.domain, config.H, config.seed_ghost, 0, k)


def frozen_ghost_points(config: HycoConfig, problem: Problem) -> np.ndarray:
    return sample_uniform_points(problem.model.domain, config.H, config.seed_ghost, 1)


def player_gradient_norms(config: HycoConfig, problem: Problem, lam, theta, ghosts=None) -> tuple[float, float]:
    """``(|grad_lam L1|, |grad_theta L2|)`` on a fixed ghost set."""
    if ghosts is None:
        ghosts = frozen_ghost_points(config, problem)
    idx = np.arange(len(problem.dataset))
    syn_g = forward(theta, ghosts)
    g_lam, *_ = physical_gradient(config, problem, lam, syn_g, idx, ghosts)
    phy_g = problem.model.predict(lam, ghosts)
    g_theta, *_ = synthetic_gradient(config, problem, theta, phy_g, idx, ghosts)
    return float(np.linalg.norm(g_lam)), float(np.linalg.norm(g_theta.flat()))


def run_metrics(problem: Problem, lam, theta, method: str) -> dict:
    m = {}
    if method != "pure_nn":
        m["e_s_phy"] = problem.solution_error_phy(lam)
        m["e_p"] = problem.parameter_error(lam)
    if method != "physical_only":
        m["e_s_syn"] = problem.solution_error_syn(theta)
    return m


def train(config: HycoConfig, problem: Problem, lam0=None, theta0: MLPParams | None = None,
          method: str = "hyco") -> TrainResult:
    """Run the alternating scheme for at most ``config.max_iters`` iterations.

    ``method`` selects which players move: both (``hyco``), only the network
    (``pure_nn``) or only the physical model (``physical_only``). The two
    baselines switch the interaction term off.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if method != "hyco":
        config = replace(config, interaction_weight=0.0)
    move_lam = method in ("hyco", "physical_only")
    move_theta = method in ("hyco", "pure_nn")
    lam = problem.model.project(problem.lambda_init if lam0 is None else lam0)
    theta = init_params(problem.nn_config) if theta0 is None else theta0
    lam_opt = AdamState.zeros_like(lam)
    theta_opt = AdamState.zeros_like(theta)
    hist = TrainHistory(method=method)
    M = len(problem.dataset)
    all_idx = np.arange(M)
    coupled = config.interaction_weight > 0
    t0 = time.perf_counter()
    try:
        for k in range(config.max_iters):
            ghosts = ghost_points(config, problem, k)
            if config.batch_size is not None and config.batch_size < M:
                idx = np.sort(make_rng(config.seed_data, 2, k).choice(M, config.batch_size, replace=False))
            else:
                idx = all_idx
            # the only quantity the network hands to the physical player
            syn_g = forward(theta, ghosts)
            if move_lam:
                new_lam, lam_opt, (L_phy, L_int, phy_g) = physical_update(
                    config, problem, lam, lam_opt, syn_g, idx, ghosts)
            else:
                new_lam = lam
                (phy_d, phy_g), _ = problem.model.evaluate(lam, [problem.dataset.points[idx], ghosts])
                L_phy = data_loss(phy_d, problem.dataset.observations[idx], lam, config.reg_lambda)[0]
                L_int = interaction_loss_mc(syn_g, phy_g, problem.model.domain.measure)[0]
            if move_theta:
                if coupled and move_lam and config.update_schedule == "gauss_seidel":
                    phy_for_syn = problem.model.predict(new_lam, ghosts)
                else:
                    phy_for_syn = phy_g
                new_theta, theta_opt, L_syn = synthetic_update(
                    config, problem, theta, theta_opt, phy_for_syn, idx, ghosts)
            else:
                new_theta = theta
                L_syn = data_loss(forward(theta, problem.dataset.points[idx]),
                                  problem.dataset.observations[idx], theta, config.reg_theta)[0]
            w = config.interaction_weight
            hist.losses.append(LossBreakdown(L_phy, L_syn, L_int, config.beta * L_phy + w * L_int,
                                             config.alpha * L_syn + w * L_int))
            lam, theta = new_lam, new_theta
            hist.lambdas.append(np.array(lam))
            last = k == config.max_iters - 1
            stop = coupled and check_stopping(hist.L_int, config.stop_tol, config.stop_window)
            if k % config.metrics_every == 0 or last or stop:
                hist.metrics.append(run_metrics(problem, lam, theta, method))
            else:
                hist.metrics.append(None)
            if stop:
                hist.stop_iter = k
                g_lam, g_theta = player_gradient_norms(config, problem, lam, theta)
                hist.stationarity = {"grad_lambda": g_lam, "grad_theta": g_theta}
                break
    except Exception as exc:
        hist.wall_clock = time.perf_counter() - t0
        raise TrainingError(f"training failed at iteration {len(hist)}: {exc}", hist, lam, theta) from exc
    hist.wall_clock = time.perf_counter() - t0
    return TrainResult(hist, lam, theta)


def run_baseline(kind: str, config: HycoConfig, problem: Problem, lam0=None, theta0=None) -> TrainResult:
    """``pure_nn`` trains only the network on data, ``physical_only`` only the
    physical parameters (the classical inverse-solver analogue)."""
    if kind not in ("pure_nn", "physical_only"):
        raise ValueError(f"unknown baseline {kind!r}")
    return train(config, problem, lam0, theta0, method=kind)

