"""Score-based diffusion around a conditioning spectrogram ``x_mu``.

The forward process drifts a clean spectrogram ``x0`` toward ``x_mu`` while
injecting noise::

    dx_t = 0.5 * (x_mu - x_t) * s_t dt + sqrt(s_t) dW_t

with a linear rate ``s_t = beta0 + (beta1 - beta0) * t`` on ``t`` in [0, 1].
Its marginal given ``x0`` is Gaussian with mean
``(1 - e^{-I/2}) x_mu + e^{-I/2} x0`` and variance ``eta_t = 1 - e^{-I}``,
where ``I`` is the integral of the rate from 0 to ``t``. Inference integrates
the probability-flow ODE backward from a temperature-scaled Gaussian around
``x_mu``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np

from . import ndtensor as nd
from .ndtensor import Node

WEIGHTINGS = ("none", "eta")


@dataclass(frozen=True)
class NoiseSchedule:
    beta0: float = 0.05
    beta1: float = 20.0

    def __post_init__(self):
        if not 0.0 < self.beta0 <= self.beta1:
            raise ValueError(f"need 0 < beta0 <= beta1, got {self.beta0}, {self.beta1}")

    def rate(self, t: float) -> float:
        return self.beta0 + (self.beta1 - self.beta0) * t


@dataclass(frozen=True)
class InferenceConfig:
    steps: int = 50
    temperature: float = 3.5
    t_min: float = 1e-3

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.temperature > 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0.0 < self.t_min < 1.0:
            raise ValueError(f"t_min must lie in (0, 1), got {self.t_min}")


def _check_time(t: float, lo_open: bool = False) -> None:
    if not (0.0 <= t <= 1.0) or (lo_open and t <= 0.0):
        bounds = "(0, 1]" if lo_open else "[0, 1]"
        raise ValueError(f"t={t} outside {bounds}")


def schedule_integral(sched: NoiseSchedule, t: float) -> float:
    """Integral of the noise rate over [0, t], in closed form."""
    _check_time(t)
    return sched.beta0 * t + 0.5 * (sched.beta1 - sched.beta0) * t * t


def eta(sched: NoiseSchedule, t: float) -> float:
    """Marginal noise variance ``1 - exp(-integral)`` at time ``t``."""
    return -math.expm1(-schedule_integral(sched, t))


def marginal_coefficients(sched: NoiseSchedule, t: float) -> Tuple[float, float, float]:
    """``(weight on x_mu, weight on x0, variance)`` of the forward marginal at ``t``."""
    decay = math.exp(-0.5 * schedule_integral(sched, t))
    return 1.0 - decay, decay, eta(sched, t)


def _same_shape(*arrays: np.ndarray) -> None:
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def forward_marginal_sample(sched: NoiseSchedule, x0, x_mu, t: float,
                            rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw ``x_t`` given ``x0``; returns ``(x_t, g_t)`` with ``g_t`` the added noise."""
    x0, x_mu = np.asarray(x0, dtype=np.float64), np.asarray(x_mu, dtype=np.float64)
    _same_shape(x0, x_mu)
    _check_time(t, lo_open=True)
    a_mu, a_0, var = marginal_coefficients(sched, t)
    g = math.sqrt(var) * rng.standard_normal(x0.shape)
    mean = a_mu * x_mu + a_0 * x0
    return mean + g, g


def forward_sde_step(sched: NoiseSchedule, x_t, x_mu, t: float, dt: float,
                     rng: np.random.Generator) -> np.ndarray:
    """One Euler-Maruyama step of the forward SDE from ``t`` to ``t + dt``."""
    x_t, x_mu = np.asarray(x_t, dtype=np.float64), np.asarray(x_mu, dtype=np.float64)
    _same_shape(x_t, x_mu)
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if t + dt > 1.0 + 1e-12:
        raise ValueError(f"step from t={t} by dt={dt} passes t=1")
    s = sched.rate(t)
    z = rng.standard_normal(x_t.shape)
    return x_t + 0.5 * (x_mu - x_t) * s * dt + math.sqrt(s * dt) * z


def simulate_forward(sched: NoiseSchedule, x0, x_mu, steps: int, rng: np.random.Generator,
                     t_end: float = 1.0) -> np.ndarray:
    """Run ``steps`` Euler-Maruyama steps from ``x0`` at t=0 to ``t_end``.

    ``x0`` and ``x_mu`` may carry leading path dimensions (they broadcast).
    """
    x = np.array(x0, dtype=np.float64)
    x_mu = np.broadcast_to(np.asarray(x_mu, dtype=np.float64), x.shape)
    dt = t_end / steps
    for k in range(steps):
        x = forward_sde_step(sched, x, x_mu, k * dt, dt, rng)
    return x


def score_oracle(sched: NoiseSchedule, x_t, x0, x_mu, t: float) -> np.ndarray:
    """Conditional score ``-(x_t - mean_t) / eta_t`` of the forward marginal."""
    x_t, x0, x_mu = (np.asarray(a, dtype=np.float64) for a in (x_t, x0, x_mu))
    _same_shape(x_t, x0, x_mu)
    _check_time(t, lo_open=True)
    a_mu, a_0, var = marginal_coefficients(sched, t)
    if var < 1e-12:
        raise ValueError(f"eta({t}) = {var:.3e} is degenerate")
    return -(x_t - (a_mu * x_mu + a_0 * x0)) / var


def oracle_score_fn(sched: NoiseSchedule, x0) -> Callable:
    """``score_fn(x_t, x_mu, t)`` closed over the clean target ``x0``."""
    return lambda x_t, x_mu, t: score_oracle(sched, x_t, x0, x_mu, t)


def sample_time(rng: np.random.Generator, t_min: float = 1e-3) -> float:
    """Uniform draw on (t_min, 1]."""
    return 1.0 - (1.0 - t_min) * rng.random()


def diffusion_loss_node(score_fn: Callable[[Node, Node, float], Node], sched: NoiseSchedule,
                        x0, x_mu: Union[Node, np.ndarray], rng: np.random.Generator,
                        weighting: str = "none", t_min: float = 1e-3,
                        t: float = None) -> Node:
    """Score-matching loss as a graph node.

    ``score_fn`` receives graph nodes and must return a node. ``x_mu`` may be a
    node (gradient then reaches whatever produced it, through both the
    conditioner and ``x_t``). Consumes the stream as: one time draw (unless
    ``t`` is given), then one standard normal per element.
    """
    if weighting not in WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    if not isinstance(x_mu, Node):
        x_mu = Node.const(x_mu, "x_mu")
    x0 = np.asarray(x0, dtype=np.float64)
    _same_shape(x0, x_mu.value)
    if t is None:
        t = sample_time(rng, t_min)
    _check_time(t, lo_open=True)
    a_mu, a_0, var = marginal_coefficients(sched, t)
    g = math.sqrt(var) * rng.standard_normal(x0.shape)

    x_t = nd.add(nd.add(nd.scale(x_mu, a_mu), Node.const(a_0 * x0)), Node.const(g), name="x_t")
    pred = score_fn(x_t, x_mu, t)
    if not isinstance(pred, Node):
        pred = Node.const(pred)
    if pred.shape != x0.shape:
        raise ValueError(f"score_fn returned shape {pred.shape}, expected {x0.shape}")
    resid = nd.add(pred, Node.const(g / var))
    loss = nd.scale(nd.squared_norm(resid), 1.0 / x0.size)
    if weighting == "eta":
        loss = nd.scale(loss, var)
    return loss


def diffusion_loss(score_fn: Callable, sched: NoiseSchedule, x0, x_mu, rng: np.random.Generator,
                   weighting: str = "none", t_min: float = 1e-3, t: float = None) -> float:
    """Score-matching loss for an array-valued ``score_fn(x_t, x_mu, t)``.

    Draws one time and one noise realisation; the mean over elements of
    ``w(t) * (score_fn + g_t / eta_t)**2`` is returned.
    """
    def wrapped(x_t: Node, x_mu_node: Node, tt: float) -> Node:
        out = np.asarray(score_fn(x_t.value, x_mu_node.value, tt), dtype=np.float64)
        if out.shape != x_t.shape:
            raise ValueError(f"score_fn returned shape {out.shape}, expected {x_t.shape}")
        return Node.const(out)

    return diffusion_loss_node(wrapped, sched, x0, np.asarray(x_mu, dtype=np.float64), rng,
                               weighting, t_min, t).item()


def init_sample_temperature(x_mu, theta: float, rng: np.random.Generator) -> np.ndarray:
    """Starting point of the reverse ODE: ``x_mu`` plus noise of variance ``1 / theta``."""
    if not theta > 0.0:
        raise ValueError(f"theta must be positive, got {theta}")
    x_mu = np.asarray(x_mu, dtype=np.float64)
    return x_mu + rng.standard_normal(x_mu.shape) / math.sqrt(theta)


def time_grid(cfg: InferenceConfig) -> np.ndarray:
    """The ``steps`` evaluation times 1, 1 - h, ..., t_min + h, with ``h = (1 - t_min) / steps``."""
    h = (1.0 - cfg.t_min) / cfg.steps
    return 1.0 - h * np.arange(cfg.steps)


def reverse_ode(score_fn: Callable, sched: NoiseSchedule, x_mu, cfg: InferenceConfig,
                rng: np.random.Generator, x_init=None) -> np.ndarray:
    """Integrate the probability-flow ODE from t=1 down to ``cfg.t_min`` with Euler steps.

    ``x_init`` overrides the temperature-scaled starting sample (no draw is made then).
    """
    x_mu = np.asarray(x_mu, dtype=np.float64)
    x = init_sample_temperature(x_mu, cfg.temperature, rng) if x_init is None \
        else np.array(x_init, dtype=np.float64)
    h = (1.0 - cfg.t_min) / cfg.steps
    for k, t in enumerate(time_grid(cfg)):
        score = np.asarray(score_fn(x, x_mu, float(t)), dtype=np.float64)
        with np.errstate(over="ignore", invalid="ignore"):
            x = x - h * 0.5 * sched.rate(t) * (x_mu - x - score)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"reverse ODE produced non-finite values at step {k} (t={t:.6f})")
    return x


def joint_loss(l_enc, l_d, lambda_d: float = 1.0):
    """``l_enc + lambda_d * l_d`` for floats or graph nodes."""
    if lambda_d < 0:
        raise ValueError(f"lambda_d must be non-negative, got {lambda_d}")
    if isinstance(l_enc, Node) or isinstance(l_d, Node):
        l_enc = l_enc if isinstance(l_enc, Node) else Node.const(l_enc)
        l_d = l_d if isinstance(l_d, Node) else Node.const(l_d)
        return nd.add(l_enc, nd.scale(l_d, lambda_d), name="joint_loss")
    return l_enc + lambda_d * l_d
