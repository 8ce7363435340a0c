"""Short-time Fourier analysis and synthesis at 16 kHz.

Frames are taken without centering: frame ``t`` covers samples
``[t * hop, t * hop + frame_len)`` and any tail shorter than one hop is
dropped.  Synthesis is weighted overlap-add normalized by the summed squared
window.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 16000

# Below this the squared-window sum only occurs in the first/last few samples of
# the signal, which are covered by the tail of a single window.  Dividing by it
# would amplify any inconsistency of a modified spectrogram by up to 1e8.
_NORM_FLOOR = 1e-3


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise SpectralError(f"waveform must be 1-D, got shape {samples.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise SpectralError(
                f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise SpectralError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def periodic_hann(n: int) -> np.ndarray:
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 320
    hop: int = 160
    window: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.frame_len < 2 or self.frame_len % 2:
            raise SpectralError("frame_len must be a positive even number")
        if self.hop * 2 != self.frame_len:
            raise SpectralError("hop must be half the frame length (50% overlap)")
        if self.window is None:
            object.__setattr__(self, "window", periodic_hann(self.frame_len))
        window = np.asarray(self.window, dtype=np.float64)
        if window.shape != (self.frame_len,):
            raise SpectralError("window length must equal frame_len")
        if np.any(window < 0) or np.any(window > 1):
            raise SpectralError("window values must lie in [0, 1]")
        object.__setattr__(self, "window", window)

    @property
    def n_bins(self) -> int:
        return self.frame_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return 1 + (n_samples - self.frame_len) // self.hop

    def synthesis_length(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop + self.frame_len


DEFAULT_STFT = StftConfig()


@dataclass(frozen=True)
class Spectrogram:
    """Complex T x F spectrogram.  ``values[t, f]`` is frame ``t``, bin ``f``."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.complex128)
        if values.ndim != 2:
            raise SpectralError(f"spectrogram must be 2-D, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)


def _as_samples(wave) -> np.ndarray:
    if isinstance(wave, Waveform):
        return wave.samples
    return np.asarray(wave, dtype=np.float64)


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n = cfg.n_frames(x.shape[0])
    idx = np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(n)[:, None]
    return x[idx]


def stft(wave, cfg: StftConfig = DEFAULT_STFT) -> Spectrogram:
    x = _as_samples(wave)
    if x.shape[0] < cfg.frame_len:
        raise SpectralError(
            f"input too short: {x.shape[0]} samples, need at least {cfg.frame_len}")
    frames = frame_signal(x, cfg) * cfg.window
    return Spectrogram(np.fft.rfft(frames, n=cfg.frame_len, axis=1))


def window_sum_square(n_frames: int, cfg: StftConfig) -> np.ndarray:
    out = np.zeros(cfg.synthesis_length(n_frames))
    wsq = cfg.window ** 2
    for t in range(n_frames):
        out[t * cfg.hop:t * cfg.hop + cfg.frame_len] += wsq
    return out


def interior_slice(n_samples: int, cfg: StftConfig) -> slice:
    """Samples covered by two overlapping frames (excludes the outer hops)."""
    return slice(cfg.hop, max(cfg.hop, n_samples - cfg.hop))


def istft(spec, cfg: StftConfig = DEFAULT_STFT) -> Waveform:
    values = spec.values if isinstance(spec, Spectrogram) else np.asarray(spec)
    if values.ndim != 2 or values.shape[1] != cfg.n_bins:
        raise SpectralError(
            f"spectrogram shape {values.shape} inconsistent with {cfg.n_bins} bins")
    n_frames = values.shape[0]
    if n_frames == 0:
        raise SpectralError("spectrogram has no frames")
    frames = np.fft.irfft(values, n=cfg.frame_len, axis=1) * cfg.window
    out = np.zeros(cfg.synthesis_length(n_frames))
    for t in range(n_frames):
        out[t * cfg.hop:t * cfg.hop + cfg.frame_len] += frames[t]
    norm = window_sum_square(n_frames, cfg)
    inner = norm[interior_slice(out.shape[0], cfg)]
    if inner.size and inner.min() <= 0.0:
        raise RuntimeError("window overlap-add sum vanishes inside the signal")
    return Waveform(out / np.maximum(norm, _NORM_FLOOR))


def recombine(magnitude: np.ndarray, phase: np.ndarray,
              cfg: StftConfig = DEFAULT_STFT) -> Waveform:
    """Synthesize a waveform from a magnitude plane and a (noisy) phase plane."""
    magnitude = np.asarray(magnitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if magnitude.shape != phase.shape:
        raise SpectralError(
            f"magnitude shape {magnitude.shape} != phase shape {phase.shape}")
    return istft(Spectrogram(magnitude * np.exp(1j * phase)), cfg)
