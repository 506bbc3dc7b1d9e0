"""Per-frame score network and the diffusion training regimes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import align
from . import ndtensor as nd
from . import rng as rng_mod
from .corpus import SyntheticUtterance
from .diffusion import NoiseSchedule, diffusion_loss_node, joint_loss
from .encoder import EncoderModel, aligned_prediction
from .ndtensor import Node
from .training import (TrainOptions, TrainResult, batch_mean, encoder_step_nodes, fit, prefixed,
                       split_params)

EMB_DIM = 16
NORM_KEYS = ("norm.shift", "norm.scale")


@dataclass
class ScoreNet:
    """MLP over ``[x_t frame, x_mu frame, time embedding]`` producing one score frame.

    Spectrogram inputs are standardised with the fixed ``norm.shift`` and
    ``norm.scale`` entries, which are stored with the weights but never trained.
    """

    params: Dict[str, np.ndarray]

    @property
    def bins(self) -> int:
        return self.params["out.w"].shape[1]

    @property
    def depth(self) -> int:
        return sum(1 for k in self.params if k.startswith("w") and k[1:].isdigit())

    @property
    def trainable(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k not in NORM_KEYS}


def init_scorenet(bins: int, widths: Sequence[int] = (128, 128), seed: int = 0,
                  shift: float = 0.0, scale: float = 1.0) -> ScoreNet:
    r = rng_mod.stream(seed, "init", "scorenet")
    params = {}
    fan_in = 2 * bins + EMB_DIM
    for k, width in enumerate(widths):
        params[f"w{k}"] = r.standard_normal((fan_in, width)) / np.sqrt(fan_in)
        params[f"b{k}"] = np.zeros(width)
        fan_in = width
    params["out.w"] = r.standard_normal((fan_in, bins)) / np.sqrt(fan_in)
    params["out.b"] = np.zeros(bins)
    params["norm.shift"] = np.array([shift])
    params["norm.scale"] = np.array([scale])
    return ScoreNet({k: nd.as_tensor(v, k) for k, v in params.items()})


def time_embedding(t: float, dim: int = EMB_DIM) -> np.ndarray:
    """Sines and cosines of ``t`` at log-spaced frequencies between 1 and 100."""
    freqs = np.logspace(0.0, 2.0, dim // 2)
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)])


def _dense(x: Node, w: Node, b: Node) -> Node:
    h = nd.matmul(x, w)
    return nd.add(h, nd.broadcast(b, h.shape))


def score_graph(net: ScoreNet, x_t: Node, x_mu: Node, t: float,
                leaves: Optional[Dict[str, Node]] = None) -> Node:
    if x_t.shape != x_mu.shape:
        raise ValueError(f"x_t shape {x_t.shape} differs from x_mu shape {x_mu.shape}")
    if x_t.value.ndim != 2 or x_t.shape[1] != net.bins:
        raise ValueError(f"expected (frames, {net.bins}) input, got {x_t.shape}")
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t={t} outside (0, 1]")
    p = dict(leaves) if leaves is not None else {}
    for k, v in net.params.items():
        p.setdefault(k, Node.const(v, k))
    shift = float(net.params["norm.shift"][0])
    inv = 1.0 / float(net.params["norm.scale"][0])
    frames = x_t.shape[0]
    shift_c = Node.const(np.full(x_t.shape, shift))
    temb = Node.const(np.tile(time_embedding(t), (frames, 1)))
    h = nd.concat([nd.scale(nd.sub(x_t, shift_c), inv), nd.scale(nd.sub(x_mu, shift_c), inv), temb], axis=1)
    for k in range(net.depth):
        h = nd.tanh(_dense(h, p[f"w{k}"], p[f"b{k}"]))
    return _dense(h, p["out.w"], p["out.b"])


def score_forward(net: ScoreNet, x_t, x_mu, t: float) -> np.ndarray:
    x_t = np.asarray(x_t, dtype=np.float64)
    x_mu = np.asarray(x_mu, dtype=np.float64)
    if x_t.shape != x_mu.shape:
        raise ValueError(f"x_t shape {x_t.shape} differs from x_mu shape {x_mu.shape}")
    return np.array(score_graph(net, Node.const(x_t), Node.const(x_mu), t).value)


def score_fn_for(net: ScoreNet):
    """Array-valued ``score_fn(x_t, x_mu, t)`` for :func:`diffusion.reverse_ode`."""
    return lambda x_t, x_mu, t: score_forward(net, x_t, x_mu, t)


def _graph_score_fn(net: ScoreNet, leaves: Dict[str, Node]):
    return lambda x_t, x_mu, t: score_graph(net, x_t, x_mu, t, leaves)


def data_normalisation(corpus: Sequence[SyntheticUtterance]) -> Tuple[float, float]:
    """Global mean and standard deviation of the target Mel values."""
    values = np.concatenate([u.mel.values.ravel() for u in corpus])
    return float(values.mean()), float(values.std() or 1.0)


def _score_leaves(leaves: Dict[str, Node], prefix: str, net: ScoreNet) -> Dict[str, Node]:
    return {k: leaves[prefix + k] for k in net.trainable}


def train_diffusion_finetune(net: ScoreNet, frozen_encoder: EncoderModel,
                             corpus: Sequence[SyntheticUtterance], opts: TrainOptions,
                             sched: NoiseSchedule = NoiseSchedule()) -> Tuple[ScoreNet, TrainResult]:
    """Train the score network on encoder predictions with the encoder held fixed.

    Silent utterances are DTW-aligned onto the target time axis first.
    """
    x_mu = {id(u): aligned_prediction(frozen_encoder, u, opts.lam) for u in corpus}

    def step_fn(leaves, batch, drng):
        sl = _score_leaves(leaves, "score.", net)
        parts = [diffusion_loss_node(_graph_score_fn(net, sl), sched, u.mel.values, x_mu[id(u)], drng,
                                     opts.weighting, opts.t_min) for u in batch]
        l_d = batch_mean(parts)
        return l_d, None, l_d.item()

    result = fit(prefixed(net.trainable, "score."), step_fn, corpus, opts)
    trained = ScoreNet({**net.params, **split_params(result.params, "score.")})
    return trained, result


def e2e_step_nodes(net: ScoreNet, encoder: EncoderModel, leaves: Dict[str, Node], batch, drng,
                   opts: TrainOptions, sched: NoiseSchedule):
    """``(L, L_enc, L_d)`` nodes for one E2E batch; gradient reaches the encoder through ``x_mu``."""
    parts = encoder_step_nodes(encoder, leaves, batch, opts.lam, "enc.")
    l_enc = batch_mean([p.l_enc for p in parts])
    sl = _score_leaves(leaves, "score.", net)
    d_parts = []
    for utt, part in zip(batch, parts):
        x_mu = part.pred_mel if part.path is None else \
            align.apply_alignment_node(part.pred_mel, part.path, utt.mel.frames)
        d_parts.append(diffusion_loss_node(_graph_score_fn(net, sl), sched, utt.mel.values, x_mu, drng,
                                           opts.weighting, opts.t_min))
    l_d = batch_mean(d_parts)
    return joint_loss(l_enc, l_d, opts.lambda_d), l_enc, l_d


def train_e2e(net: ScoreNet, encoder: EncoderModel, corpus: Sequence[SyntheticUtterance],
              opts: TrainOptions, sched: NoiseSchedule = NoiseSchedule()
              ) -> Tuple[ScoreNet, EncoderModel, TrainResult]:
    """Jointly train encoder and score network on ``L_enc + lambda_d * L_d``."""
    def step_fn(leaves, batch, drng):
        loss, l_enc, l_d = e2e_step_nodes(net, encoder, leaves, batch, drng, opts, sched)
        return loss, l_enc.item(), l_d.item()

    params = {**prefixed(encoder.params, "enc."), **prefixed(net.trainable, "score.")}
    result = fit(params, step_fn, corpus, opts)
    trained_net = ScoreNet({**net.params, **split_params(result.params, "score.")})
    trained_enc = EncoderModel(split_params(result.params, "enc."), encoder.window_radius)
    return trained_net, trained_enc, result


def mean_diffusion_loss(net: ScoreNet, pairs, sched: NoiseSchedule = NoiseSchedule(),
                        draws: int = 32, seed: int = 0, weighting: str = "none",
                        t_min: float = 1e-3) -> float:
    """Average loss over a fixed set of time/noise draws; ``pairs`` is a list of ``(x0, x_mu)``."""
    drng = rng_mod.stream(seed, "eval-loss")
    fn = _graph_score_fn(net, {})
    vals = [diffusion_loss_node(fn, sched, x0, x_mu, drng, weighting, t_min).item()
            for _ in range(draws) for x0, x_mu in pairs]
    return float(np.mean(vals))
