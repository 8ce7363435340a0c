"""Teacher and student training with optional sub-band knowledge distillation.

Training data are magnitude spectrogram pairs.  Every epoch the utterances are
shuffled, one random crop of ``chunk_frames`` frames is taken from each, and the
crops are grouped into batches.  A teacher always sees its own band; the
student draws a band uniformly at random for every batch.  Residual bins are
never used for training.
"""
from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from . import network
from .checkpoint import Checkpoint
from .data import epoch_order
from .network import AdamState, DivergenceError, ModelParams, ShapeError
from .spectral import DEFAULT_STFT, StftConfig, Waveform, recombine, stft
from .subband import SubbandPartition, assemble_stacked, extract_all

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.0002
    batch_size: int = 600
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_reduce_factor: float = 0.5
    lr_patience: int = 3
    stop_patience: int = 10
    stop_min_delta: float = 1e-5
    chunk_frames: int = 192
    max_epochs: int = 100
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.lr_reduce_factor < 1 and 0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("decay factors must lie in (0, 1)")
        if min(self.lr_patience, self.stop_patience, self.batch_size,
               self.chunk_frames, self.max_epochs) < 1:
            raise ValueError("patience, batch size, chunk length and epochs must be >= 1")


@dataclass
class DistillConfig:
    teachers: list[Checkpoint]
    alpha: float = 0.1

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_time: float


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def best_val(self) -> float:
        return min(e.val_loss for e in self.epochs)

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for rec in self.epochs:
                fh.write(json.dumps(asdict(rec)) + "\n")
            fh.write(json.dumps({"stop_reason": self.stop_reason}) + "\n")
        return path


@dataclass
class Utterance:
    noisy: np.ndarray    # T x F magnitudes
    clean: np.ndarray    # T x F magnitudes

    @property
    def n_frames(self) -> int:
        return self.noisy.shape[0]


def prepare_features(pairs: Sequence[tuple], cfg: StftConfig = DEFAULT_STFT) -> list[Utterance]:
    """(clean, noisy) waveform pairs -> magnitude spectrogram pairs."""
    out = []
    for clean, noisy in pairs:
        out.append(Utterance(stft(noisy, cfg).magnitude, stft(clean, cfg).magnitude))
    return out


# -------------------------------------------------------------------- losses

def _masked(diff, mask):
    if mask is None:
        return diff, diff.size
    m = np.broadcast_to(np.asarray(mask, dtype=bool)[..., None], diff.shape)
    count = int(m.sum())
    if count == 0:
        raise ValueError("mask selects no elements")
    return np.where(m, diff, 0.0), count


def mse_loss(pred, target, mask=None) -> tuple[float, np.ndarray]:
    """Mean squared error over all (unmasked) elements and its gradient w.r.t. ``pred``.

    ``mask`` marks real frames; it has the shape of ``pred`` without the last axis.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff, count = _masked(pred - target, mask)
    return float(np.sum(diff * diff) / count), 2.0 * diff / count


def distill_loss(student_out, clean, teacher_out, alpha: float,
                 mask=None) -> tuple[float, np.ndarray]:
    """MSE to the clean target plus ``alpha`` times MSE to the frozen teacher output.

    The teacher output is a constant: no gradient is returned for it.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    student_out = np.asarray(student_out, dtype=np.float64)
    if np.shape(teacher_out) != student_out.shape:
        raise ShapeError(f"shape mismatch: {student_out.shape} vs {np.shape(teacher_out)}")
    l_clean, g_clean = mse_loss(student_out, clean, mask)
    l_teacher, g_teacher = mse_loss(student_out, teacher_out, mask)
    return l_clean + alpha * l_teacher, g_clean + alpha * g_teacher


# ----------------------------------------------------------------- batching

def split_validation(utts: list[Utterance], cfg: TrainConfig):
    """Seeded random hold-out of ``val_fraction`` of the utterances."""
    if len(utts) < 2:
        return list(utts), list(utts)
    n_val = max(1, int(round(cfg.val_fraction * len(utts))))
    perm = np.random.default_rng([cfg.seed, 1]).permutation(len(utts))
    val_idx = set(perm[:n_val].tolist())
    train = [u for k, u in enumerate(utts) if k not in val_idx]
    val = [u for k, u in enumerate(utts) if k in val_idx]
    return train, val


def _crop_batch(utts, order, chunk, rng):
    B = len(order)
    F = utts[0].noisy.shape[1]
    noisy = np.zeros((B, chunk, F))
    clean = np.zeros((B, chunk, F))
    mask = np.zeros((B, chunk), dtype=bool)
    for b, k in enumerate(order):
        u = utts[k]
        T = u.n_frames
        start = int(rng.integers(0, T - chunk + 1)) if T > chunk else 0
        n = min(chunk, T)
        noisy[b, :n] = u.noisy[start:start + n]
        clean[b, :n] = u.clean[start:start + n]
        mask[b, :n] = True
    return noisy, clean, mask


def _pad_full(utts):
    T = max(u.n_frames for u in utts)
    F = utts[0].noisy.shape[1]
    noisy = np.zeros((len(utts), T, F))
    clean = np.zeros((len(utts), T, F))
    mask = np.zeros((len(utts), T), dtype=bool)
    for b, u in enumerate(utts):
        noisy[b, :u.n_frames] = u.noisy
        clean[b, :u.n_frames] = u.clean
        mask[b, :u.n_frames] = True
    return noisy, clean, mask


def predict_bands(params: ModelParams, noisy: np.ndarray, part: SubbandPartition,
                  bands: Sequence[int] | None = None) -> np.ndarray:
    """Run one model over the chosen bands of a ``B x T x F`` batch -> ``len(bands) x B x T x w``."""
    bands = range(part.n_bands) if bands is None else bands
    B, T, _ = noisy.shape
    x = np.stack([noisy[:, :, slice(*part.band(i))] for i in bands])
    y = network.forward(params, x.reshape(-1, T, part.band_width))
    return y.reshape(len(bands), B, T, part.band_width)


def band_losses(params_per_band, utts: list[Utterance], part: SubbandPartition,
                bands: Sequence[int] | None = None, batch: int = 64) -> list[float]:
    """Masked MSE of each band over whole utterances.

    ``params_per_band`` is either one ModelParams (a student) or a mapping
    band index -> ModelParams (teachers).
    """
    bands = list(range(part.n_bands)) if bands is None else list(bands)
    sq = np.zeros(len(bands))
    count = 0
    shared = isinstance(params_per_band, ModelParams)
    for s in range(0, len(utts), batch):
        noisy, clean, mask = _pad_full(utts[s:s + batch])
        if shared:
            outs = predict_bands(params_per_band, noisy, part, bands)
        else:
            outs = [network.forward(params_per_band[i], noisy[:, :, slice(*part.band(i))])
                    for i in bands]
        for j, i in enumerate(bands):
            lo, hi = part.band(i)
            d = np.where(mask[..., None], outs[j] - clean[:, :, lo:hi], 0.0)
            sq[j] += np.sum(d * d)
        count += int(mask.sum()) * part.band_width
    return (sq / count).tolist()


# ------------------------------------------------------------------ training

class BandSampler:
    """Seeded uniform draw of one band index per training step."""

    def __init__(self, seed: int, n_bands: int):
        self.n_bands = n_bands
        self._rng = np.random.default_rng([seed, 3])

    def draw(self) -> int:
        return int(self._rng.integers(self.n_bands))


class PlateauSchedule:
    """Reduce-on-plateau learning rate plus early stopping on validation loss.

    An epoch counts as an improvement only if it beats the best loss so far by
    more than ``min_delta``.
    """

    def __init__(self, lr: float, factor: float, lr_patience: int,
                 stop_patience: int, min_delta: float):
        self.lr = lr
        self.factor = factor
        self.lr_patience = lr_patience
        self.stop_patience = stop_patience
        self.min_delta = min_delta
        self.best = math.inf
        self._lr_bad = 0
        self._stop_bad = 0

    def step(self, val_loss: float) -> tuple[bool, bool]:
        """Record one epoch; returns (improved, should_stop).  May lower ``self.lr``."""
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self._lr_bad = 0
            self._stop_bad = 0
            return True, False
        self._lr_bad += 1
        self._stop_bad += 1
        if self._stop_bad >= self.stop_patience:
            return False, True
        if self._lr_bad >= self.lr_patience:
            self.lr *= self.factor
            self._lr_bad = 0
        return False, False


def _check_finite(loss):
    if not math.isfinite(loss):
        raise DivergenceError("diverged: non-finite loss")


def _fit(params: ModelParams, train: list[Utterance], val: list[Utterance],
         part: SubbandPartition, cfg: TrainConfig, band: int | None,
         distill: DistillConfig | None) -> tuple[ModelParams, TrainReport]:
    """Shared loop.  ``band`` fixes the band (teacher); ``None`` samples per batch (student)."""
    if not train:
        raise ValueError("training corpus is empty")
    rng = np.random.default_rng([cfg.seed, 2])
    sampler = BandSampler(cfg.seed, part.n_bands)
    state = AdamState.for_params(params)
    val_bands = [band] if band is not None else list(range(part.n_bands))
    teachers = {c.band_index: c.params for c in distill.teachers} if distill else None
    schedule = PlateauSchedule(cfg.lr, cfg.lr_reduce_factor, cfg.lr_patience,
                               cfg.stop_patience, cfg.stop_min_delta)
    best_params = params.copy()
    report = TrainReport()
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        order = epoch_order(len(train), cfg.seed, epoch)
        total, steps = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            noisy, clean, mask = _crop_batch(train, order[s:s + cfg.batch_size],
                                             cfg.chunk_frames, rng)
            i = band if band is not None else sampler.draw()
            lo, hi = part.band(i)
            x, y = noisy[:, :, lo:hi], clean[:, :, lo:hi]
            out, cache = network.forward(params, x, return_cache=True)
            if teachers is not None:
                t_out = network.forward(teachers[i], x)
                loss, grad = distill_loss(out, y, t_out, distill.alpha, mask)
            else:
                loss, grad = mse_loss(out, y, mask)
            _check_finite(loss)
            grads = network.backward(params, x, grad, cache)
            network.adam_step(params, grads, state, schedule.lr, cfg.beta1, cfg.beta2, cfg.eps)
            total += loss
            steps += 1
        val_loss = float(np.mean(band_losses(params, val, part, val_bands)))
        _check_finite(val_loss)
        report.epochs.append(EpochRecord(epoch, total / steps, val_loss, schedule.lr,
                                         time.perf_counter() - t0))
        log.info("epoch %d train %.6g val %.6g lr %.3g",
                 epoch, total / steps, val_loss, schedule.lr)
        improved, stop = schedule.step(val_loss)
        if improved:
            best_params = params.copy()
        if stop:
            report.stop_reason = "early_stop"
            break
    else:
        report.stop_reason = "max_epochs"
    return best_params, report


def _split(corpus, val, cfg):
    utts = list(corpus)
    if not utts:
        raise ValueError("training corpus is empty")
    if val is None:
        return split_validation(utts, cfg)
    return utts, list(val)


def train_teacher(corpus: Sequence[Utterance], band_index: int, part: SubbandPartition,
                  hidden: int, cfg: TrainConfig, val: Sequence[Utterance] | None = None
                  ) -> tuple[Checkpoint, TrainReport]:
    """Train the expert for one band on (noisy band slice -> clean band slice)."""
    part.band(band_index)
    train, val = _split(corpus, val, cfg)
    params = network.init_params(part.band_width, hidden, np.random.default_rng([cfg.seed, 0]))
    params, report = _fit(params, train, val, part, cfg, band_index, None)
    return Checkpoint(params, "teacher", band_index), report


def check_teachers(distill: DistillConfig, part: SubbandPartition, hidden: int | None = None):
    bands = {}
    for c in distill.teachers:
        if c.kind != "teacher":
            raise ValueError(f"checkpoint for band {c.band_index} is a {c.kind}, not a teacher")
        if c.w != part.band_width:
            raise ShapeError(
                f"teacher for band {c.band_index} has width {c.w}, student uses {part.band_width}")
        bands[c.band_index] = c
    missing = [i for i in range(part.n_bands) if i not in bands]
    if missing:
        raise ValueError(f"missing teacher for band(s) {missing}")
    extra = sorted(set(bands) - set(range(part.n_bands)))
    if extra or len(distill.teachers) != part.n_bands:
        raise ValueError(f"expected exactly {part.n_bands} teachers, got bands {sorted(bands)}")
    if hidden is not None:
        small = [i for i, c in bands.items() if c.h < hidden]
        if small:
            warnings.warn(f"teachers for bands {small} are smaller than the student "
                          f"(h < {hidden}); guidance is expected to be weak", stacklevel=3)


def train_student(corpus: Sequence[Utterance], part: SubbandPartition, hidden: int,
                  cfg: TrainConfig, distill: DistillConfig | None = None,
                  val: Sequence[Utterance] | None = None) -> tuple[Checkpoint, TrainReport]:
    """Train one general model for all bands, optionally guided by frozen per-band teachers."""
    if distill is not None:
        check_teachers(distill, part, hidden)
    train, val = _split(corpus, val, cfg)
    params = network.init_params(part.band_width, hidden, np.random.default_rng([cfg.seed, 0]))
    params, report = _fit(params, train, val, part, cfg, None, distill)
    return Checkpoint(params, "student", "all"), report


# ----------------------------------------------------------------- inference

def enhance_magnitude(params: ModelParams, noisy_mag: np.ndarray,
                      part: SubbandPartition) -> np.ndarray:
    """Enhance every band of a T x F magnitude plane with one model; residual bins pass through."""
    if params.w != part.band_width:
        raise ShapeError(f"model width {params.w} does not match band width {part.band_width}")
    bands = extract_all(noisy_mag, part)
    return assemble_stacked(network.forward(params, bands), noisy_mag, part)


def ensemble_magnitude(teachers: Sequence[Checkpoint], noisy_mag: np.ndarray,
                       part: SubbandPartition) -> np.ndarray:
    """Stack each teacher's output on its own band (the per-band expert ensemble)."""
    by_band = {c.band_index: c.params for c in teachers}
    bands = extract_all(noisy_mag, part)
    out = np.stack([network.forward(by_band[i], bands[i]) for i in range(part.n_bands)])
    return assemble_stacked(out, noisy_mag, part)


def enhance(model, noisy, part: SubbandPartition, cfg: StftConfig = DEFAULT_STFT,
            bypass: bool = False) -> Waveform:
    """STFT -> per-band enhancement -> residual passthrough -> noisy-phase ISTFT."""
    params = model.params if isinstance(model, Checkpoint) else model
    spec = stft(noisy, cfg)
    if part.total_bins != spec.n_bins:
        raise ShapeError(f"partition covers {part.total_bins} bins, STFT has {spec.n_bins}")
    mag = spec.magnitude
    if not bypass:
        mag = enhance_magnitude(params, mag, part)
    return recombine(mag, spec.phase, cfg)
