"""Frame-wise EMG encoder: windowed-context MLP with Mel and phoneme heads."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import align
from . import ndtensor as nd
from . import rng as rng_mod
from .corpus import INVENTORY, SyntheticUtterance
from .ndtensor import Node


@dataclass
class EncoderModel:
    params: Dict[str, np.ndarray]
    window_radius: int = 2

    @property
    def in_channels(self) -> int:
        return self.params["w0"].shape[0] // (2 * self.window_radius + 1)

    @property
    def bins(self) -> int:
        return self.params["mel.w"].shape[1]

    @property
    def n_classes(self) -> int:
        return self.params["phone.w"].shape[1]

    @property
    def widths(self) -> List[int]:
        return [self.params[f"w{k}"].shape[1] for k in range(self.depth)]

    @property
    def depth(self) -> int:
        return sum(1 for k in self.params if k.startswith("w") and k[1:].isdigit())

    def leaves(self, prefix: str = "") -> Dict[str, Node]:
        return {name: Node.leaf(p, prefix + name) for name, p in self.params.items()}


def init_encoder(in_channels: int, bins: int, n_classes: int = INVENTORY,
                 widths: Sequence[int] = (64, 64), window_radius: int = 2, seed: int = 0,
                 mel_bias=None) -> EncoderModel:
    """Scaled-normal weights, zero biases. ``mel_bias`` seeds the Mel head bias (e.g. corpus mean)."""
    r = rng_mod.stream(seed, "init", "encoder")
    params = {}
    fan_in = in_channels * (2 * window_radius + 1)
    for k, width in enumerate(widths):
        params[f"w{k}"] = r.standard_normal((fan_in, width)) / np.sqrt(fan_in)
        params[f"b{k}"] = np.zeros(width)
        fan_in = width
    params["mel.w"] = r.standard_normal((fan_in, bins)) / np.sqrt(fan_in)
    params["mel.b"] = np.zeros(bins) if mel_bias is None else np.array(mel_bias, dtype=np.float64)
    params["phone.w"] = r.standard_normal((fan_in, n_classes)) / np.sqrt(fan_in)
    params["phone.b"] = np.zeros(n_classes)
    return EncoderModel({k: nd.as_tensor(v, k) for k, v in params.items()}, window_radius)


def window_features(emg: np.ndarray, radius: int) -> np.ndarray:
    """Stack each frame with ``radius`` neighbours on both sides; edges are zero-padded."""
    emg = np.asarray(emg, dtype=np.float64)
    n, c = emg.shape
    padded = np.concatenate([np.zeros((radius, c)), emg, np.zeros((radius, c))])
    return np.concatenate([padded[k:k + n] for k in range(2 * radius + 1)], axis=1)


def _dense(x: Node, w: Node, b: Node) -> Node:
    h = nd.matmul(x, w)
    return nd.add(h, nd.broadcast(b, h.shape))


def encoder_graph(model: EncoderModel, emg, leaves: Optional[Dict[str, Node]] = None) -> Tuple[Node, Node]:
    """Forward pass as graph nodes: ``(pred_mel, phone_logits)``."""
    emg = np.asarray(emg, dtype=np.float64)
    if emg.ndim != 2 or emg.shape[1] != model.in_channels:
        raise ValueError(f"EMG features of shape {emg.shape} do not match {model.in_channels} input channels")
    p = leaves if leaves is not None else {k: Node.const(v, k) for k, v in model.params.items()}
    h = Node.const(window_features(emg, model.window_radius))
    for k in range(model.depth):
        h = nd.tanh(_dense(h, p[f"w{k}"], p[f"b{k}"]))
    return _dense(h, p["mel.w"], p["mel.b"]), _dense(h, p["phone.w"], p["phone.b"])


def encoder_forward(model: EncoderModel, emg_features) -> Tuple[np.ndarray, np.ndarray]:
    mel, logits = encoder_graph(model, emg_features)
    return np.array(mel.value), np.array(logits.value)


@dataclass
class EncoderLossBreakdown:
    l_mel: float
    l_phone: float
    l_enc: float
    lam: float
    path: Optional[list] = None


@dataclass
class EncoderLossNodes:
    l_mel: Node
    l_phone: Node
    l_enc: Node
    lam: float
    pred_mel: Node
    phone_logits: Node
    path: Optional[list] = None

    def values(self) -> EncoderLossBreakdown:
        return EncoderLossBreakdown(self.l_mel.item(), self.l_phone.item(), self.l_enc.item(),
                                    self.lam, self.path)


def audible_loss_nodes(pred_mel: Node, phone_logits: Node, gt_mel, gt_phonemes,
                       lam: float = 0.5) -> Tuple[Node, Node, Node]:
    gt_mel = np.asarray(gt_mel, dtype=np.float64)
    if pred_mel.shape[0] != gt_mel.shape[0]:
        raise ValueError(f"audible loss needs equal frame counts, got {pred_mel.shape[0]} and {gt_mel.shape[0]}")
    if pred_mel.shape != gt_mel.shape:
        raise ValueError(f"bin mismatch: {pred_mel.shape} vs {gt_mel.shape}")
    diff = nd.sub(pred_mel, Node.const(gt_mel))
    l_mel = nd.mean(nd.sqrt(nd.squared_norm(diff, axis=1)), name="l_mel")
    l_phone = nd.mean(nd.softmax_xent(phone_logits, gt_phonemes), name="l_phone")
    l_enc = nd.add(l_mel, nd.scale(l_phone, lam), name="l_enc")
    return l_mel, l_phone, l_enc


def encoder_loss_audible(pred_mel, phone_logits, gt_mel, gt_phonemes, lam: float = 0.5) -> EncoderLossBreakdown:
    """Mean per-frame 2-norm Mel error plus ``lam`` times mean frame cross-entropy."""
    l_mel, l_phone, l_enc = audible_loss_nodes(Node.const(pred_mel), Node.const(phone_logits),
                                               gt_mel, gt_phonemes, lam)
    return EncoderLossBreakdown(l_mel.item(), l_phone.item(), l_enc.item(), lam)


def encoder_loss_nodes(model: EncoderModel, utt: SyntheticUtterance, lam: float = 0.5,
                       leaves: Optional[Dict[str, Node]] = None, path=None) -> EncoderLossNodes:
    pred_mel, logits = encoder_graph(model, utt.emg_features, leaves)
    gt_mel, labels = utt.mel.values, utt.phonemes.frame_labels
    if utt.mode == "audible":
        l_mel, l_phone, l_enc = audible_loss_nodes(pred_mel, logits, gt_mel, labels, lam)
        return EncoderLossNodes(l_mel, l_phone, l_enc, lam, pred_mel, logits)
    l_enc, l_mel, l_phone, path = align.silent_alignment_loss_node(pred_mel, logits, gt_mel, labels, lam, path)
    return EncoderLossNodes(l_mel, l_phone, l_enc, lam, pred_mel, logits, path)


def encoder_loss(model: EncoderModel, utt: SyntheticUtterance, lam: float = 0.5) -> EncoderLossBreakdown:
    """Audible utterances use the synchronous loss; silent ones the DTW path cost."""
    return encoder_loss_nodes(model, utt, lam).values()


def phoneme_accuracy(model: EncoderModel, utts: Sequence[SyntheticUtterance]) -> float:
    """Frame accuracy on audible utterances (silent ones have no frame correspondence)."""
    hits = total = 0
    for utt in utts:
        if utt.mode != "audible":
            continue
        _, logits = encoder_forward(model, utt.emg_features)
        hits += int(np.sum(logits.argmax(axis=1) == utt.phonemes.frame_labels))
        total += len(utt.phonemes)
    return hits / max(total, 1)


def aligned_prediction(model: EncoderModel, utt: SyntheticUtterance, lam: float = 0.5) -> np.ndarray:
    """Encoder Mel prediction on the target time axis (DTW-aligned for silent utterances)."""
    pred_mel, logits = encoder_forward(model, utt.emg_features)
    if utt.mode == "audible":
        return pred_mel
    cost = align.build_cost_matrix(pred_mel, nd.log_softmax(logits), utt.mel.values,
                                   utt.phonemes.frame_labels, lam)
    path, _ = align.dtw_align(cost)
    return align.apply_alignment(pred_mel, path, utt.mel.frames)
