"""Sub-band spectral-mapping speech enhancement with per-band teacher distillation."""

from .network import ModelParams, param_count
from .spectral import DEFAULT_STFT, Spectrogram, StftConfig, Waveform, istft, recombine, stft
from .subband import SubbandPartition, assemble, extract, make_partition
from .training import (DistillConfig, TrainConfig, distill_loss, enhance, mse_loss,
                       train_student, train_teacher)

__version__ = "0.1.0"
