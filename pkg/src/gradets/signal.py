"""Waveform I/O, log Mel features and Griffin-Lim inversion."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_FLOOR = 1e-5


class AudioFormatError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 160
    bins: int = 80
    fmin: float = 0.0
    fmax: float = None

    @property
    def top(self) -> float:
        return self.fmax if self.fmax is not None else self.sample_rate / 2.0


@dataclass
class MelSpectrogram:
    """``frames x bins`` natural-log Mel energies."""

    values: np.ndarray
    frame_hop_seconds: float = 0.01

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"mel values must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mel values contain non-finite entries")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]


# --------------------------------------------------------------------------
# WAV


def load_wav(path) -> Waveform:
    """Read a mono 16-bit PCM RIFF/WAVE file, scaling samples by 1/32768."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate = w.getnchannels(), w.getsampwidth(), w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: {exc}") from exc
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono, found {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit PCM, found {8 * width}-bit")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def save_wav(w: Waveform, path) -> None:
    """Write mono PCM16; samples are clipped to the representable range."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(int(w.sample_rate))
        out.writeframes(pcm.tobytes())


# --------------------------------------------------------------------------
# STFT


def hann(n: int) -> np.ndarray:
    # periodic window, so overlapped squares sum to a constant
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(n_samples: int, n_fft: int, hop: int) -> int:
    """Frames of a centred STFT: the signal is padded by ``n_fft // 2`` on both sides."""
    return (n_samples + 2 * (n_fft // 2) - n_fft) // hop + 1


def stft(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Centred, zero-padded STFT; returns ``frames x (n_fft // 2 + 1)`` complex values."""
    pad = n_fft // 2
    xp = np.pad(x, pad)
    n_frames = (len(xp) - n_fft) // hop + 1
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(xp[idx] * hann(n_fft), axis=1)


def istft(spec: np.ndarray, n_fft: int, hop: int, length: int = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`."""
    win = hann(n_fft)
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * win
    n_frames = spec.shape[0]
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for k in range(n_frames):
        out[k * hop:k * hop + n_fft] += frames[k]
        norm[k * hop:k * hop + n_fft] += win * win
    out = out / np.where(norm > 1e-8, norm, 1.0)
    pad = n_fft // 2
    out = out[pad:]
    if length is None:
        length = hop * (n_frames - 1)
    out = out[:length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out


# --------------------------------------------------------------------------
# Mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular HTK-scale filters, shape ``bins x (n_fft // 2 + 1)``.

    Centres are equally spaced in mel between ``fmin`` and ``fmax``. A filter
    narrower than the FFT bin spacing keeps its nearest FFT bin so every row
    has positive mass.
    """
    n_freq = cfg.n_fft // 2 + 1
    freqs = np.linspace(0.0, cfg.sample_rate / 2.0, n_freq)
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.top), cfg.bins + 2))
    fb = np.zeros((cfg.bins, n_freq))
    for b in range(cfg.bins):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[b] = np.maximum(0.0, np.minimum(rise, fall))
        if not fb[b].any():
            fb[b, int(np.argmin(np.abs(freqs - mid)))] = 1.0
    return fb


def log_mel(w: Waveform, cfg: MelConfig = MelConfig()) -> MelSpectrogram:
    """STFT magnitude through the Mel filterbank, then ``ln(max(., 1e-5))``."""
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} Hz audio, got {w.sample_rate}")
    if len(w.samples) < cfg.n_fft:
        raise ValueError(f"waveform of {len(w.samples)} samples is shorter than one window ({cfg.n_fft})")
    mag = np.abs(stft(w.samples, cfg.n_fft, cfg.hop))
    mel = mag @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)), cfg.hop / cfg.sample_rate)


def mel_to_linear(m: MelSpectrogram, cfg: MelConfig, iterations: int = 300) -> np.ndarray:
    """Non-negative least-squares inverse of the filterbank.

    Multiplicative updates from the transposed-filterbank estimate; all frames
    at once. Starting from a strictly positive point keeps the solution smooth
    across FFT bins instead of the sparse vertex an active-set solver returns.
    """
    fb = mel_filterbank(cfg)
    target = np.exp(m.values)
    num = target @ fb
    mag = np.maximum(num / np.maximum(fb.sum(axis=0), 1e-8), 1e-12)
    for _ in range(iterations):
        mag *= num / np.maximum((mag @ fb.T) @ fb, 1e-30)
    return mag


def griffin_lim(m: MelSpectrogram, iterations: int = 60, cfg: MelConfig = MelConfig()) -> Waveform:
    """Estimate a waveform whose log Mel spectrogram matches ``m``.

    Starts from zero phase; deterministic for a given input.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if m.bins != cfg.bins:
        raise ValueError(f"mel has {m.bins} bins, config expects {cfg.bins}")
    mag = mel_to_linear(m, cfg)
    length = cfg.hop * (m.frames - 1)
    phase = np.ones_like(mag, dtype=np.complex128)
    x = istft(mag * phase, cfg.n_fft, cfg.hop, length)
    for _ in range(iterations - 1):
        spec = stft(x, cfg.n_fft, cfg.hop)
        phase = np.exp(1j * np.angle(spec))
        x = istft(mag * phase, cfg.n_fft, cfg.hop, length)
    return Waveform(x, cfg.sample_rate)
