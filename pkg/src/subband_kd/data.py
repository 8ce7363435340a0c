"""Waveform I/O, SNR-controlled mixing and the synthetic toy corpus."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .spectral import SAMPLE_RATE, Waveform

TRAIN_SNRS = (0.0, 5.0, 10.0, 15.0)
TEST_SNRS = (2.5, 7.5, 12.5, 17.5)
NOISE_TYPES = ("white", "pink", "bandlimited")
INDEX_NAME = "index.json"


class DataError(ValueError):
    pass


# --------------------------------------------------------------------------- wav

def read_wav(path) -> Waveform:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as e:
        raise DataError(f"{path}: cannot read WAV ({e})") from None
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono, found {data.shape[1]} channels")
    if rate != SAMPLE_RATE:
        raise DataError(f"{path}: expected {SAMPLE_RATE} Hz sample rate, found {rate} Hz")
    if data.dtype != np.int16:
        raise DataError(f"{path}: expected 16-bit PCM, found {data.dtype}")
    return Waveform(data.astype(np.float64) / 32768.0)


def write_wav(path, wave) -> Path:
    """Write 16-bit PCM mono; amplitudes are clipped to [-1, 1)."""
    path = Path(path)
    x = wave.samples if isinstance(wave, Waveform) else np.asarray(wave, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, SAMPLE_RATE, pcm)
    return path


# -------------------------------------------------------------------------- mixing

@dataclass(frozen=True)
class MixtureSample:
    clean: Waveform
    noise: Waveform          # scaled noise actually added
    noisy: Waveform
    snr_db: float


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(power(clean) / power(noise))


def mix_at_snr(clean, noise, snr: float, rng: np.random.Generator | None = None) -> MixtureSample:
    """Scale a random crop of ``noise`` so that clean-to-noise power is ``snr`` dB and add it.

    ``snr = inf`` bypasses mixing (the noisy signal equals the clean one).
    """
    s = clean.samples if isinstance(clean, Waveform) else np.asarray(clean, dtype=np.float64)
    d = noise.samples if isinstance(noise, Waveform) else np.asarray(noise, dtype=np.float64)
    if d.shape[0] < s.shape[0]:
        raise DataError(f"noise ({d.shape[0]} samples) shorter than clean ({s.shape[0]})")
    p_clean = power(s)
    if p_clean == 0.0:
        raise DataError("clean signal is silent")
    if math.isinf(snr) and snr > 0:
        return MixtureSample(Waveform(s), Waveform(np.zeros_like(s)), Waveform(s.copy()), snr)
    rng = rng if rng is not None else np.random.default_rng(0)
    start = int(rng.integers(0, d.shape[0] - s.shape[0] + 1))
    d = d[start:start + s.shape[0]]
    p_noise = power(d)
    if p_noise == 0.0:
        raise DataError("noise signal is silent")
    scaled = d * math.sqrt(p_clean / (p_noise * 10.0 ** (snr / 10.0)))
    return MixtureSample(Waveform(s), Waveform(scaled), Waveform(s + scaled), float(snr))


# ----------------------------------------------------------------- toy generators

def _envelope(n: int, rng: np.random.Generator) -> np.ndarray:
    """Syllable-like amplitude envelope: raised-cosine bursts separated by short pauses."""
    env = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.08) * SAMPLE_RATE)
    while pos < n:
        length = int(rng.uniform(0.12, 0.35) * SAMPLE_RATE)
        burst = np.sin(np.pi * np.arange(length) / length) ** 2 * rng.uniform(0.5, 1.0)
        end = min(n, pos + length)
        env[pos:end] = np.maximum(env[pos:end], burst[:end - pos])
        pos = end + int(rng.uniform(0.02, 0.15) * SAMPLE_RATE)
    return env


def speech_like(duration_s: float, rng: np.random.Generator) -> np.ndarray:
    """Harmonic tone complex with a gliding fundamental in 80-300 Hz and decaying harmonics."""
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0_start, f0_end = rng.uniform(80.0, 300.0, size=2)
    f0 = np.linspace(f0_start, f0_end, n) * (1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(3, 7) * t))
    phase = 2.0 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    tilt = rng.uniform(1.0, 2.0)
    x = np.zeros(n)
    for k in range(1, int(7800 // max(f0_start, f0_end)) + 1):
        x += np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k ** tilt
    x *= _envelope(n, rng)
    peak = np.max(np.abs(x))
    return x / peak * rng.uniform(0.05, 0.1) if peak > 0 else x


def make_noise(kind: str, n: int, rng: np.random.Generator) -> np.ndarray:
    white = rng.standard_normal(n)
    if kind == "white":
        return white
    if kind == "pink":
        spec = np.fft.rfft(white)
        f = np.arange(spec.shape[0], dtype=np.float64)
        f[0] = 1.0
        return np.fft.irfft(spec / np.sqrt(f), n=n)
    if kind == "bandlimited":
        lo = rng.uniform(100.0, 3000.0)
        hi = min(lo * rng.uniform(1.5, 4.0), 7900.0)
        sos = signal.butter(4, [lo, hi], btype="bandpass", fs=SAMPLE_RATE, output="sos")
        return signal.sosfilt(sos, white)
    raise DataError(f"unknown noise type {kind!r}")


# ------------------------------------------------------------------------ corpus

@dataclass
class CorpusEntry:
    id: str
    split: str
    clean: str
    noisy: str
    duration: float
    snr_db: float | None = None
    noise_type: str | None = None


@dataclass
class CorpusIndex:
    root: Path
    entries: list[CorpusEntry] = field(default_factory=list)

    def split(self, name: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.split == name]

    def path(self, rel: str) -> Path:
        return self.root / rel

    def validate(self) -> None:
        seen = {}
        for e in self.entries:
            if e.id in seen and seen[e.id] != e.split:
                raise DataError(f"entry {e.id} appears in splits {seen[e.id]} and {e.split}")
            seen[e.id] = e.split
            for rel in (e.clean, e.noisy):
                read_wav(self.path(rel))

    def save(self) -> Path:
        path = self.root / INDEX_NAME
        data = {"entries": [asdict(e) for e in self.entries]}
        path.write_text(json.dumps(data, indent=1) + "\n")
        return path

    @classmethod
    def load(cls, root) -> "CorpusIndex":
        root = Path(root)
        path = root / INDEX_NAME
        if not path.is_file():
            raise DataError(f"no corpus index at {path}")
        data = json.loads(path.read_text())
        return cls(root, [CorpusEntry(**e) for e in data["entries"]])

    def load_pairs(self, split: str) -> list[tuple[Waveform, Waveform]]:
        """(clean, noisy) waveforms of one split, in index order."""
        return [(read_wav(self.path(e.clean)), read_wav(self.path(e.noisy)))
                for e in self.split(split)]


def index_directory(root, clean_dir="clean", noisy_dir="noisy", split="train") -> CorpusIndex:
    """Index a directory of paired clean/noisy WAVs matched by file name."""
    root = Path(root)
    clean = {p.name: p for p in sorted((root / clean_dir).glob("*.wav"))}
    noisy = {p.name: p for p in sorted((root / noisy_dir).glob("*.wav"))}
    unpaired = sorted(set(clean) ^ set(noisy))
    if unpaired:
        raise DataError(f"unpaired files: {', '.join(unpaired)}")
    if not clean:
        raise DataError(f"no WAV files under {root / clean_dir}")
    entries = []
    for name in clean:
        w = read_wav(clean[name])
        entries.append(CorpusEntry(Path(name).stem, split,
                                   str(clean[name].relative_to(root)),
                                   str(noisy[name].relative_to(root)), w.duration))
    return CorpusIndex(root, entries)


def generate_mixture(rng: np.random.Generator, duration_s: float, snr: float,
                     noise_type: str) -> MixtureSample:
    clean = speech_like(duration_s, rng)
    noise = make_noise(noise_type, clean.shape[0] + SAMPLE_RATE // 2, rng)
    mix = mix_at_snr(clean, noise, snr, rng)
    peak = np.max(np.abs(mix.noisy.samples))
    if peak >= 0.99:
        g = 0.95 / peak
        mix = MixtureSample(Waveform(mix.clean.samples * g), Waveform(mix.noise.samples * g),
                            Waveform(mix.noisy.samples * g), snr)
    return mix


def generate_toy_corpus(out_dir, seed: int, count: int, duration_s: float = 1.0,
                        test_count: int | None = None) -> CorpusIndex:
    """Write ``count`` training and ``test_count`` test mixtures plus ``index.json``.

    Training mixtures use SNRs from :data:`TRAIN_SNRS`, test mixtures from
    :data:`TEST_SNRS`, cycling through SNRs and noise types.
    """
    if count < 1:
        raise DataError("count must be at least 1")
    if test_count is None:
        test_count = max(1, count // 4)
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write_test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        raise DataError(f"output directory {root} is not writable: {e}") from None
    seqs = np.random.SeedSequence(seed).spawn(count + test_count)
    entries = []
    for k, seq in enumerate(seqs):
        split, j = ("train", k) if k < count else ("test", k - count)
        snrs = TRAIN_SNRS if split == "train" else TEST_SNRS
        snr = snrs[j % len(snrs)]
        kind = NOISE_TYPES[(j // len(snrs)) % len(NOISE_TYPES)]
        mix = generate_mixture(np.random.default_rng(seq), duration_s, snr, kind)
        uid = f"{split}_{j:05d}"
        clean_rel = f"{split}/clean/{uid}.wav"
        noisy_rel = f"{split}/noisy/{uid}.wav"
        write_wav(root / clean_rel, mix.clean)
        write_wav(root / noisy_rel, mix.noisy)
        entries.append(CorpusEntry(uid, split, clean_rel, noisy_rel,
                                   mix.clean.duration, snr, kind))
    index = CorpusIndex(root, entries)
    index.save()
    return index


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Seeded permutation of ``range(n)`` for a given epoch."""
    return np.random.default_rng([seed, epoch]).permutation(n)
