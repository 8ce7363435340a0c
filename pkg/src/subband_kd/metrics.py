"""Objective speech metrics: STOI, SI-SDR, segmental SNR and per-band spectral MSE."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import resample_poly

from .spectral import SAMPLE_RATE, Waveform
from .subband import SubbandPartition

# STOI constants (Taal et al., 2011)
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30          # frames per short-time segment (384 ms)
STOI_BETA = -15.0          # lower SDR bound, dB
STOI_DYN_RANGE = 40.0      # dB below the loudest frame that counts as silence

SI_SDR_CAP = 100.0
SEG_SNR_RANGE = (-10.0, 35.0)
_EPS = np.finfo(np.float64).eps


class MetricError(ValueError):
    pass


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def _crop(a, b):
    a, b = _samples(a), _samples(b)
    n = min(a.shape[0], b.shape[0])
    return a[:n], b[:n]


# ---------------------------------------------------------------------- STOI

def third_octave_matrix(fs=STOI_FS, nfft=STOI_NFFT, n_bands=STOI_BANDS,
                        min_freq=STOI_MIN_FREQ) -> np.ndarray:
    """Binary (n_bands x nfft//2+1) matrix grouping DFT bins into one-third octave bands."""
    f = np.linspace(0, fs, nfft + 1)[:nfft // 2 + 1]
    k = np.arange(n_bands, dtype=np.float64)
    lo = min_freq * 2.0 ** ((2 * k - 1) / 6)
    hi = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((n_bands, f.shape[0]))
    for i in range(n_bands):
        a = int(np.argmin(np.square(f - lo[i])))
        b = int(np.argmin(np.square(f - hi[i])))
        obm[i, a:b] = 1.0
    return obm


def _stoi_window(n):
    return np.hanning(n + 2)[1:-1]


def _frames(x, n, hop):
    starts = range(0, x.shape[0] - n, hop)
    return np.array([x[s:s + n] for s in starts]).reshape(-1, n)


def remove_silent_frames(x, y, dyn_range=STOI_DYN_RANGE, n=STOI_FRAME, hop=STOI_FRAME // 2):
    """Drop frames whose clean-signal energy is more than ``dyn_range`` dB below the maximum."""
    w = _stoi_window(n)
    xf = _frames(x, n, hop) * w
    yf = _frames(y, n, hop) * w
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - dyn_range if energy.size else energy.astype(bool)
    xf, yf = xf[keep], yf[keep]
    k = xf.shape[0]
    length = (k - 1) * hop + n if k else 0
    xs, ys = np.zeros(length), np.zeros(length)
    for i in range(k):
        xs[i * hop:i * hop + n] += xf[i]
        ys[i * hop:i * hop + n] += yf[i]
    return xs, ys


def _stoi_spectrum(x):
    frames = _frames(x, STOI_FRAME, STOI_FRAME // 2) * _stoi_window(STOI_FRAME)
    return np.fft.rfft(frames, n=STOI_NFFT, axis=1)


def stoi(clean, degraded, fs: int = SAMPLE_RATE) -> float:
    """Short-time objective intelligibility in [0, 1] (at most 1; can dip below 0 in theory)."""
    x, y = _crop(clean, degraded)
    if x.shape[0] < int(0.384 * fs):
        raise MetricError(f"input too short for STOI: {x.shape[0]} samples")
    if fs != STOI_FS:
        g = math.gcd(STOI_FS, fs)
        x = resample_poly(x, STOI_FS // g, fs // g)
        y = resample_poly(y, STOI_FS // g, fs // g)
    x, y = remove_silent_frames(x, y)
    obm = third_octave_matrix()
    x_tob = np.sqrt(obm @ np.square(np.abs(_stoi_spectrum(x))).T)
    y_tob = np.sqrt(obm @ np.square(np.abs(_stoi_spectrum(y))).T)
    n_frames = x_tob.shape[1]
    if n_frames < STOI_SEGMENT:
        raise MetricError("input too short for STOI after silence removal")
    clip = 10.0 ** (-STOI_BETA / 20.0)
    scores = []
    for m in range(STOI_SEGMENT, n_frames + 1):
        xs = x_tob[:, m - STOI_SEGMENT:m]
        ys = y_tob[:, m - STOI_SEGMENT:m]
        gain = np.linalg.norm(xs, axis=1, keepdims=True) / (
            np.linalg.norm(ys, axis=1, keepdims=True) + _EPS)
        yp = np.minimum(ys * gain, xs * (1.0 + clip))
        xc = xs - xs.mean(axis=1, keepdims=True)
        yc = yp - yp.mean(axis=1, keepdims=True)
        xc /= np.linalg.norm(xc, axis=1, keepdims=True) + _EPS
        yc /= np.linalg.norm(yc, axis=1, keepdims=True) + _EPS
        scores.append(np.sum(xc * yc, axis=1))
    return float(np.mean(scores))


# ---------------------------------------------------------- waveform fidelity

def si_sdr(reference, estimate) -> float:
    """Scale-invariant SDR in dB, capped at +100 dB."""
    r, e = _crop(reference, estimate)
    rr = float(np.dot(r, r))
    if rr == 0.0:
        raise MetricError("reference signal is silent")
    target = (np.dot(e, r) / rr) * r
    resid = e - target
    num = float(np.dot(target, target))
    den = float(np.dot(resid, resid))
    if den <= num * 10.0 ** (-SI_SDR_CAP / 10.0):
        return SI_SDR_CAP
    if num == 0.0:
        return -SI_SDR_CAP
    return 10.0 * math.log10(num / den)


def seg_snr(clean, degraded, frame_len: int = 512, hop: int = 256) -> float:
    """Segmental SNR over 32 ms frames with 50% overlap, per-frame values clamped to [-10, 35] dB."""
    s, e = _crop(clean, degraded)
    if s.shape[0] < frame_len:
        raise MetricError("input too short for segmental SNR")
    n = 1 + (s.shape[0] - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    sig = np.sum(np.square(s[idx]), axis=1)
    err = np.sum(np.square(s[idx] - e[idx]), axis=1)
    vals = 10.0 * np.log10((sig + _EPS) / (err + _EPS))
    return float(np.mean(np.clip(vals, *SEG_SNR_RANGE)))


def band_mse(clean_mag: np.ndarray, enhanced_mag: np.ndarray,
             part: SubbandPartition) -> list[float]:
    clean_mag = np.asarray(clean_mag, dtype=np.float64)
    enhanced_mag = np.asarray(enhanced_mag, dtype=np.float64)
    if clean_mag.shape != enhanced_mag.shape:
        raise MetricError(f"shape mismatch: {clean_mag.shape} vs {enhanced_mag.shape}")
    if clean_mag.ndim != 2 or clean_mag.shape[1] != part.total_bins:
        raise MetricError(f"planes must be T x {part.total_bins}")
    diff = np.square(clean_mag - enhanced_mag)
    return [float(diff[:, lo:hi].mean()) for lo, hi in part.bands]


# --------------------------------------------------------------------- reports

@dataclass
class UtteranceMetrics:
    name: str
    stoi: float
    si_sdr: float
    seg_snr: float
    band_mse: list[float] = field(default_factory=list)
    pesq: float | None = None


@dataclass
class MetricReport:
    rows: list[UtteranceMetrics]

    def mean(self) -> dict:
        if not self.rows:
            raise MetricError("empty report")
        out = {
            "stoi": float(np.mean([r.stoi for r in self.rows])),
            "si_sdr": float(np.mean([r.si_sdr for r in self.rows])),
            "seg_snr": float(np.mean([r.seg_snr for r in self.rows])),
            "band_mse": [float(v) for v in np.mean([r.band_mse for r in self.rows], axis=0)]
            if self.rows[0].band_mse else [],
        }
        pesq = [r.pesq for r in self.rows if r.pesq is not None]
        out["pesq"] = float(np.mean(pesq)) if len(pesq) == len(self.rows) else None
        return out

    def to_json(self, path) -> Path:
        path = Path(path)
        data = {
            "utterances": [vars(r) | {"stoi_pct": 100.0 * r.stoi} for r in self.rows],
            "mean": self.mean() | {"stoi_pct": 100.0 * self.mean()["stoi"]},
        }
        path.write_text(json.dumps(data, indent=1) + "\n")
        return path

    def to_csv(self, path) -> Path:
        path = Path(path)
        n_bands = len(self.rows[0].band_mse) if self.rows else 0
        header = ["name", "stoi", "stoi_pct", "si_sdr", "seg_snr"]
        header += [f"band_mse_{i}" for i in range(n_bands)] + ["pesq"]

        def line(name, m):
            pesq = "" if m.get("pesq") is None else m["pesq"]
            return [name, m["stoi"], 100.0 * m["stoi"], m["si_sdr"], m["seg_snr"],
                    *m["band_mse"], pesq]

        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in self.rows:
                writer.writerow(line(r.name, vars(r)))
            writer.writerow(line("mean", self.mean()))
        return path


def merge_pesq(report: MetricReport, pesq_csv) -> MetricReport:
    """Attach externally computed PESQ scores (CSV with ``name,pesq`` columns)."""
    with Path(pesq_csv).open(newline="") as fh:
        scores = {row["name"]: float(row["pesq"]) for row in csv.DictReader(fh)}
    for r in report.rows:
        r.pesq = scores.get(r.name)
    return report


def evaluate_pair(name: str, clean, degraded, part: SubbandPartition | None = None,
                  stft_cfg=None) -> UtteranceMetrics:
    from .spectral import DEFAULT_STFT, stft

    x, y = _crop(clean, degraded)
    bands: Sequence[float] = []
    if part is not None:
        cfg = stft_cfg or DEFAULT_STFT
        bands = band_mse(stft(x, cfg).magnitude, stft(y, cfg).magnitude, part)
    return UtteranceMetrics(name, stoi(x, y), si_sdr(x, y), seg_snr(x, y), list(bands))
