"""Synthetic paired EMG/speech corpus and its on-disk layout.

An utterance is a sequence of phoneme segments framed by silence. The
one-hot phoneme track is smoothed into a latent articulatory trajectory,
which linearly drives both the log Mel spectrogram (through per-phoneme
spectral templates) and 8-channel EMG envelope features (through
per-phoneme activation templates). Silent utterances see the trajectory
through a random monotone time-warp on the EMG side, so EMG and Mel frame
counts differ.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import rng as rng_mod
from .signal import LOG_FLOOR, MelSpectrogram

MAGIC = b"DETS"
FORMAT_VERSION = 1

SILENCE = 10
BLANK = 11
N_PHONEMES = 10
INVENTORY = 12  # 10 phonemes + silence + blank
SMOOTHING = np.array([0.25, 0.5, 0.25])


class CorpusFormatError(ValueError):
    pass


@dataclass
class PhonemeTrack:
    frame_labels: np.ndarray
    inventory_size: int = INVENTORY

    def __post_init__(self):
        self.frame_labels = np.asarray(self.frame_labels, dtype=np.int64)
        if self.frame_labels.size and (self.frame_labels.min() < 0
                                       or self.frame_labels.max() >= self.inventory_size):
            raise ValueError(f"phoneme labels must lie in [0, {self.inventory_size})")

    def __len__(self) -> int:
        return len(self.frame_labels)


@dataclass
class SyntheticUtterance:
    emg_features: np.ndarray
    mel: MelSpectrogram
    phonemes: PhonemeTrack
    mode: str
    seed: int = 0
    trajectory: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("audible", "silent"):
            raise ValueError(f"mode must be 'audible' or 'silent', got {self.mode!r}")
        if len(self.phonemes) != self.mel.frames:
            raise ValueError("phoneme track length differs from mel frame count")
        if self.mode == "audible" and self.emg_features.shape[0] != self.mel.frames:
            raise ValueError("audible utterance needs equal EMG and mel frame counts")


@dataclass(frozen=True)
class SynthConfig:
    bins: int = 80
    channels: int = 8
    mel_noise: float = 0.1
    emg_noise: float = 0.3
    min_phones: int = 4
    max_phones: int = 8
    min_duration: int = 6
    max_duration: int = 14
    warp_range: tuple = (0.8, 1.25)


@dataclass
class Templates:
    mel: np.ndarray  # (11, bins): phonemes then silence
    emg: np.ndarray  # (11, channels)


def make_templates(seed: int, cfg: SynthConfig = SynthConfig()) -> Templates:
    """Per-phoneme spectral envelopes (a tilt plus formant-like bumps) and EMG activations."""
    r = rng_mod.stream(seed, "templates")
    pos = np.linspace(0.0, 1.0, cfg.bins)
    mel = np.empty((N_PHONEMES + 1, cfg.bins))
    for k in range(N_PHONEMES):
        env = -2.0 - 4.0 * pos
        for _ in range(3):
            centre, width, height = r.uniform(0.05, 0.95), r.uniform(0.04, 0.12), r.uniform(1.5, 4.0)
            env = env + height * np.exp(-0.5 * ((pos - centre) / width) ** 2)
        mel[k] = env
    mel[SILENCE] = np.log(LOG_FLOOR) + 0.5
    emg = np.empty((N_PHONEMES + 1, cfg.channels))
    emg[:N_PHONEMES] = r.uniform(0.0, 1.0, (N_PHONEMES, cfg.channels))
    emg[SILENCE] = 0.05
    return Templates(mel, emg)


def _phone_sequence(r: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    n = int(r.integers(cfg.min_phones, cfg.max_phones + 1))
    phones = [SILENCE] + list(r.integers(0, N_PHONEMES, n)) + [SILENCE]
    labels = []
    for p in phones:
        labels.extend([int(p)] * int(r.integers(cfg.min_duration, cfg.max_duration + 1)))
    return np.array(labels, dtype=np.int64)


def smooth_trajectory(labels: np.ndarray, n_states: int = N_PHONEMES + 1) -> np.ndarray:
    """One-hot track smoothed along time with a [1/4, 1/2, 1/4] kernel (edges replicated)."""
    onehot = np.eye(n_states)[labels]
    padded = np.concatenate([onehot[:1], onehot, onehot[-1:]])
    return SMOOTHING[0] * padded[:-2] + SMOOTHING[1] * padded[1:-1] + SMOOTHING[2] * padded[2:]


def warp_positions(r: np.random.Generator, n_mel: int, cfg: SynthConfig) -> np.ndarray:
    """Monotone map from EMG frame index to fractional Mel frame position, end to end."""
    ratio = r.uniform(*cfg.warp_range)
    n_emg = max(2, int(round(n_mel * ratio)))
    steps = r.gamma(4.0, 1.0, n_emg - 1)
    pos = np.concatenate([[0.0], np.cumsum(steps)])
    return pos / pos[-1] * (n_mel - 1)


def _interp_rows(traj: np.ndarray, pos: np.ndarray) -> np.ndarray:
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(traj) - 1)
    frac = (pos - lo)[:, None]
    return (1.0 - frac) * traj[lo] + frac * traj[hi]


def make_utterance(seed: int, index: int, mode: str, templates: Templates,
                   cfg: SynthConfig = SynthConfig()) -> SyntheticUtterance:
    r = rng_mod.stream(seed, "utt", index)
    labels = _phone_sequence(r, cfg)
    traj = smooth_trajectory(labels)
    mel = traj @ templates.mel
    if cfg.mel_noise:
        mel = mel + cfg.mel_noise * r.standard_normal(mel.shape)
    emg_traj = traj if mode == "audible" else _interp_rows(traj, warp_positions(r, len(labels), cfg))
    emg = emg_traj @ templates.emg
    if cfg.emg_noise:
        emg = emg + cfg.emg_noise * r.standard_normal(emg.shape)
    return SyntheticUtterance(emg, MelSpectrogram(mel), PhonemeTrack(labels), mode, seed, traj)


def utterance_modes(n_utts: int, mode_mix: float) -> List[str]:
    """Spread ``round(n_utts * mode_mix)`` silent utterances evenly through the corpus."""
    if not 0.0 <= mode_mix <= 1.0:
        raise ValueError(f"mode_mix must lie in [0, 1], got {mode_mix}")
    return ["silent" if int((k + 1) * mode_mix + 1e-9) > int(k * mode_mix + 1e-9) else "audible"
            for k in range(n_utts)]


def synth_corpus(n_utts: int, seed: int, mode_mix: float = 0.0,
                 cfg: SynthConfig = SynthConfig()) -> List[SyntheticUtterance]:
    """Deterministic paired corpus; ``mode_mix`` is the silent fraction."""
    if n_utts < 1:
        raise ValueError(f"n_utts must be >= 1, got {n_utts}")
    templates = make_templates(seed, cfg)
    return [make_utterance(seed, k, mode, templates, cfg)
            for k, mode in enumerate(utterance_modes(n_utts, mode_mix))]


def nearest_template(mel: np.ndarray, templates: Templates) -> np.ndarray:
    """Per-frame label of the closest Mel template (Euclidean)."""
    d = ((mel[:, None, :] - templates.mel[None, :, :]) ** 2).sum(axis=-1)
    return d.argmin(axis=1)


# --------------------------------------------------------------------------
# disk layout


def write_matrix(path, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {values.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<III", FORMAT_VERSION, *values.shape))
        fh.write(values.tobytes())


def read_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise CorpusFormatError(f"{path}: bad magic")
    version, rows, cols = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise CorpusFormatError(f"{path}: unsupported version {version}")
    body = raw[16:]
    if len(body) != 8 * rows * cols:
        raise CorpusFormatError(f"{path}: expected {rows}x{cols} values, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_utterance(utt: SyntheticUtterance, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_matrix(d / "mel.f64", utt.mel.values)
    write_matrix(d / "emg.f64", utt.emg_features)
    (d / "phonemes.txt").write_text(" ".join(str(int(x)) for x in utt.phonemes.frame_labels) + "\n")
    (d / "meta.txt").write_text(f"mode={utt.mode}\nseed={utt.seed}\n")


def read_utterance(directory) -> SyntheticUtterance:
    d = Path(directory)
    meta = {}
    for line in (d / "meta.txt").read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    labels = np.array((d / "phonemes.txt").read_text().split(), dtype=np.int64)
    return SyntheticUtterance(read_matrix(d / "emg.f64"), MelSpectrogram(read_matrix(d / "mel.f64")),
                              PhonemeTrack(labels), meta["mode"], int(meta.get("seed", 0)))


def write_corpus(utts: List[SyntheticUtterance], root) -> List[Path]:
    root = Path(root)
    paths = []
    for k, utt in enumerate(utts):
        p = root / f"utt_{k:04d}"
        write_utterance(utt, p)
        paths.append(p)
    return paths


def read_corpus(root) -> List[SyntheticUtterance]:
    dirs = sorted(p for p in Path(root).iterdir() if p.is_dir() and (p / "meta.txt").exists())
    if not dirs:
        raise CorpusFormatError(f"{root}: no utterances found")
    return [read_utterance(p) for p in dirs]
