"""Shared Adam training loop and encoder-only training.

Randomness is split into named streams of the run seed: ``"batches"`` orders
utterances, ``"diffusion"`` draws times and noise. A regime that does not use
a stream never touches it, so two regimes that agree on a loss also agree on
every update.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import ndtensor as nd
from . import rng as rng_mod
from .corpus import SyntheticUtterance
from .encoder import EncoderModel, encoder_loss_nodes
from .ndtensor import Node


@dataclass
class TrainOptions:
    epochs: int = 10
    batch_size: int = 4
    learning_rate: float = 1e-4
    seed: int = 0
    lam: float = 0.5
    lambda_d: float = 1.0
    weighting: str = "none"
    t_min: float = 1e-3
    max_steps: Optional[int] = None


@dataclass
class StepLog:
    step: int
    epoch: int
    loss: float
    l_enc: float = float("nan")
    l_d: float = float("nan")


@dataclass
class TrainResult:
    params: Dict[str, np.ndarray]
    steps: List[StepLog] = field(default_factory=list)
    epoch_loss: List[float] = field(default_factory=list)


def batch_mean(nodes: Sequence[Node]) -> Node:
    total = nodes[0]
    for n in nodes[1:]:
        total = nd.add(total, n)
    return nd.scale(total, 1.0 / len(nodes))


# step_fn(leaves, batch, diffusion_rng) -> (loss node, l_enc or None, l_d or None)
StepFn = Callable[[Dict[str, Node], List[SyntheticUtterance], np.random.Generator],
                  Tuple[Node, Optional[float], Optional[float]]]


def fit(params: Dict[str, np.ndarray], step_fn: StepFn, corpus: Sequence[SyntheticUtterance],
        opts: TrainOptions) -> TrainResult:
    """Minimise ``step_fn`` over shuffled mini-batches of ``corpus`` with Adam."""
    order_rng = rng_mod.stream(opts.seed, "batches")
    diff_rng = rng_mod.stream(opts.seed, "diffusion")
    state = nd.AdamState(learning_rate=opts.learning_rate)
    result = TrainResult(dict(params))
    step = 0
    for epoch in range(opts.epochs):
        order = order_rng.permutation(len(corpus))
        losses = []
        for start in range(0, len(order), opts.batch_size):
            if opts.max_steps is not None and step >= opts.max_steps:
                break
            batch = [corpus[k] for k in order[start:start + opts.batch_size]]
            leaves = {name: Node.leaf(p, name) for name, p in result.params.items()}
            loss, l_enc, l_d = step_fn(leaves, batch, diff_rng)
            grads = nd.backward(loss, wrt=leaves.values())
            result.params, state = nd.adam_step(
                state, result.params, {name: grads[leaf.id] for name, leaf in leaves.items()})
            nan = float("nan")
            result.steps.append(StepLog(step, epoch, loss.item(),
                                        nan if l_enc is None else l_enc, nan if l_d is None else l_d))
            losses.append(loss.item())
            step += 1
        if losses:
            result.epoch_loss.append(float(np.mean(losses)))
        if opts.max_steps is not None and step >= opts.max_steps:
            break
    return result


def split_params(params: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def prefixed(params: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    return {prefix + k: v for k, v in params.items()}


def encoder_step_nodes(model: EncoderModel, leaves: Dict[str, Node], batch, lam: float, prefix: str = ""):
    """Per-utterance encoder loss nodes with the encoder's leaves looked up under ``prefix``."""
    enc_leaves = {k: leaves[prefix + k] for k in model.params}
    return [encoder_loss_nodes(model, utt, lam, enc_leaves) for utt in batch]


def train_encoder(model: EncoderModel, corpus: Sequence[SyntheticUtterance],
                  opts: TrainOptions) -> Tuple[EncoderModel, TrainResult]:
    """Encoder-only training on the batch-mean of per-utterance encoder losses."""
    def step_fn(leaves, batch, _rng):
        parts = encoder_step_nodes(model, leaves, batch, opts.lam, "enc.")
        l_enc = batch_mean([p.l_enc for p in parts])
        return l_enc, l_enc.item(), None

    result = fit(prefixed(model.params, "enc."), step_fn, corpus, opts)
    return EncoderModel(split_params(result.params, "enc."), model.window_radius), result
