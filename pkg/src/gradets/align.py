"""Joint Mel/phoneme cost matrices and DTW alignment of predictions to targets."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from . import ndtensor as nd
from .ndtensor import Node

Path = List[Tuple[int, int]]


def build_cost_matrix(pred_mel, pred_phone_logprobs, gt_mel, gt_phonemes, lam: float = 0.5) -> np.ndarray:
    """``cost[i, j] = ||pred_mel[i] - gt_mel[j]|| - lam * logp[i, gt_phonemes[j]]``."""
    pred_mel = np.asarray(pred_mel, dtype=np.float64)
    gt_mel = np.asarray(gt_mel, dtype=np.float64)
    logp = np.asarray(pred_phone_logprobs, dtype=np.float64)
    labels = np.asarray(gt_phonemes, dtype=np.int64)
    if pred_mel.shape[1] != gt_mel.shape[1]:
        raise ValueError(f"bin mismatch: predicted {pred_mel.shape[1]}, target {gt_mel.shape[1]}")
    if logp.shape[0] != pred_mel.shape[0]:
        raise ValueError("phoneme log-probabilities and predicted mel differ in frame count")
    if labels.shape != (gt_mel.shape[0],):
        raise ValueError("target phoneme track and target mel differ in frame count")
    if labels.size and (labels.min() < 0 or labels.max() >= logp.shape[1]):
        raise ValueError(f"target phoneme outside inventory of size {logp.shape[1]}")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    diff = pred_mel[:, None, :] - gt_mel[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=-1))
    if lam:
        cost = cost + lam * -logp[:, labels]
    return cost


def dtw_align(cost) -> Tuple[Path, float]:
    """Minimum-cost monotone path from (0, 0) to (N-1, M-1).

    Moves are (i+1, j), (i, j+1) and (i+1, j+1). When predecessors tie the
    diagonal wins, then the column step, then the row step.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    # anti-diagonal sweep: every cell on diagonal k depends only on k-1 and k-2
    for k in range(n + m - 1):
        i = np.arange(max(0, k - m + 1), min(n - 1, k) + 1)
        j = k - i
        best = np.minimum(np.minimum(acc[i, j], acc[i + 1, j]), acc[i, j + 1])
        acc[i + 1, j + 1] = cost[i, j] + best
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        candidates = ((i - 1, j - 1), (i, j - 1), (i - 1, j))
        i, j = min(candidates, key=lambda c: acc[c[0] + 1, c[1] + 1])
        path.append((i, j))
    path.reverse()
    return path, float(acc[n, m])


def path_cost(cost, path: Sequence[Tuple[int, int]]) -> float:
    cost = np.asarray(cost)
    return float(sum(cost[i, j] for i, j in path))


def validate_path(path: Sequence[Tuple[int, int]], n: int, m: int) -> None:
    if not path or tuple(path[0]) != (0, 0) or tuple(path[-1]) != (n - 1, m - 1):
        raise ValueError(f"path must run from (0, 0) to ({n - 1}, {m - 1})")
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        di, dj = i1 - i0, j1 - j0
        if di not in (0, 1) or dj not in (0, 1) or di + dj == 0:
            raise ValueError(f"invalid step ({i0}, {j0}) -> ({i1}, {j1})")


def _selection(path, n: int) -> np.ndarray:
    sel = np.zeros((len(path), n))
    sel[np.arange(len(path)), [i for i, _ in path]] = 1.0
    return sel


def silent_alignment_loss_node(pred_mel: Node, phone_logits: Node, gt_mel, gt_phonemes,
                               lam: float = 0.5, path=None):
    """Path-summed alignment cost as graph nodes.

    ``phone_logits`` may be unnormalised logits or log-probabilities. The DTW
    path comes from a forward pass on current values unless given, and is
    held constant for differentiation. Returns ``(total, mel_sum, phone_sum, path)``.
    """
    gt_mel = np.asarray(gt_mel, dtype=np.float64)
    labels = np.asarray(gt_phonemes, dtype=np.int64)
    n, m = pred_mel.shape[0], gt_mel.shape[0]
    if path is None:
        logp = nd.log_softmax(np.asarray(phone_logits.value))
        path, _ = dtw_align(build_cost_matrix(pred_mel.value, logp, gt_mel, labels, lam))
    validate_path(path, n, m)
    sel = Node.const(_selection(path, n))
    cols = [j for _, j in path]
    diff = nd.sub(nd.matmul(sel, pred_mel), Node.const(gt_mel[cols]))
    mel_sum = nd.sum(nd.sqrt(nd.squared_norm(diff, axis=1)), name="path_mel")
    phone_sum = nd.sum(nd.softmax_xent(nd.matmul(sel, phone_logits), labels[cols]), name="path_phone")
    total = nd.add(mel_sum, nd.scale(phone_sum, lam), name="path_cost")
    return total, mel_sum, phone_sum, path


def silent_alignment_loss(pred_mel, pred_phone_logprobs, gt_mel, gt_phonemes, lam: float = 0.5) -> float:
    """Sum of the joint cost along the DTW path."""
    _, total = dtw_align(build_cost_matrix(pred_mel, pred_phone_logprobs, gt_mel, gt_phonemes, lam))
    return total


def alignment_matrix(path, n: int, m: int) -> np.ndarray:
    """``(m, n)`` matrix averaging the predicted frames paired with each target frame."""
    validate_path(path, n, m)
    a = np.zeros((m, n))
    for i, j in path:
        a[j, i] += 1.0
    return a / a.sum(axis=1, keepdims=True)


def apply_alignment(pred_mel, path, target_len: int) -> np.ndarray:
    """Resample predicted frames onto the target time axis along ``path``."""
    pred_mel = np.asarray(pred_mel, dtype=np.float64)
    return alignment_matrix(path, pred_mel.shape[0], target_len) @ pred_mel


def apply_alignment_node(pred_mel: Node, path, target_len: int) -> Node:
    return nd.matmul(Node.const(alignment_matrix(path, pred_mel.shape[0], target_len)), pred_mel,
                     name="aligned")
