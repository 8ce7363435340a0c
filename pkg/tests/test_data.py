import hashlib
import json
import math

import numpy as np
import pytest
from scipy.io import wavfile

from subband_kd.data import (NOISE_TYPES, TEST_SNRS, TRAIN_SNRS, CorpusIndex, DataError,
                             epoch_order, generate_mixture, generate_toy_corpus, index_directory,
                             make_noise, mix_at_snr, power, read_wav, speech_like, write_wav)
from subband_kd.spectral import Waveform, stft


def achieved_snr(mix):
    return 10 * math.log10(power(mix.clean.samples) / power(mix.noise.samples))


def test_mix_zero_db_equal_powers():
    rng = np.random.default_rng(0)
    mix = mix_at_snr(rng.standard_normal(4000), rng.standard_normal(6000), 0.0, rng)
    ratio = power(mix.noise.samples) / power(mix.clean.samples)
    assert abs(ratio - 1.0) < 1e-6


def test_mix_ten_db_ratio():
    rng = np.random.default_rng(1)
    mix = mix_at_snr(rng.standard_normal(4000), make_noise("pink", 5000, rng), 10.0, rng)
    assert abs(power(mix.clean.samples) / power(mix.noise.samples) - 10.0) < 1e-4
    np.testing.assert_allclose(mix.noisy.samples, mix.clean.samples + mix.noise.samples,
                               atol=1e-9)


def test_mix_inf_bypass():
    x = np.random.default_rng(2).standard_normal(1000)
    mix = mix_at_snr(x, np.ones(1000), math.inf)
    np.testing.assert_array_equal(mix.noisy.samples, x)


def test_mix_errors():
    with pytest.raises(DataError, match="silent"):
        mix_at_snr(np.zeros(100), np.ones(100), 5.0)
    with pytest.raises(DataError, match="silent"):
        mix_at_snr(np.ones(100), np.zeros(100), 5.0)
    with pytest.raises(DataError, match="shorter"):
        mix_at_snr(np.ones(100), np.ones(50), 5.0)


def test_mixture_is_linear_in_stft_domain():
    mix = generate_mixture(np.random.default_rng(3), 0.5, 5.0, "white")
    lhs = stft(mix.noisy).values
    rhs = stft(mix.clean).values + stft(mix.noise).values
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@pytest.mark.parametrize("snr", TRAIN_SNRS + TEST_SNRS)
@pytest.mark.parametrize("kind", NOISE_TYPES)
def test_generated_mixture_snr(snr, kind):
    mix = generate_mixture(np.random.default_rng(int(snr * 10)), 1.0, snr, kind)
    assert abs(achieved_snr(mix) - snr) < 0.01
    assert np.max(np.abs(mix.noisy.samples)) < 1.0


def test_speech_like_band_energy():
    x = speech_like(1.0, np.random.default_rng(4))
    spec = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(len(x), 1 / 16000)
    assert spec[f < 1000].sum() > spec[f > 4000].sum()
    assert 0 < np.max(np.abs(x)) <= 0.1


def test_make_noise_unknown():
    with pytest.raises(DataError):
        make_noise("brown", 10, np.random.default_rng(0))


# ---------------------------------------------------------------------- wav

def test_wav_roundtrip(tmp_path):
    x = np.random.default_rng(5).uniform(-1, 1, 4000)
    y = read_wav(write_wav(tmp_path / "a.wav", Waveform(x))).samples
    assert np.max(np.abs(y - x)) <= 2.0 ** -15


def test_wav_clips(tmp_path):
    y = read_wav(write_wav(tmp_path / "c.wav", np.array([2.0, -2.0, 0.0]))).samples
    np.testing.assert_array_equal(y, [32767 / 32768, -1.0, 0.0])


def test_wav_rejects_stereo(tmp_path):
    wavfile.write(tmp_path / "s.wav", 16000, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(DataError, match="expected mono"):
        read_wav(tmp_path / "s.wav")


def test_wav_rejects_rate(tmp_path):
    wavfile.write(tmp_path / "r.wav", 44100, np.zeros(100, dtype=np.int16))
    with pytest.raises(DataError, match="16000.*44100"):
        read_wav(tmp_path / "r.wav")


def test_wav_rejects_depth(tmp_path):
    wavfile.write(tmp_path / "f.wav", 16000, np.zeros(100, dtype=np.float32))
    with pytest.raises(DataError, match="16-bit"):
        read_wav(tmp_path / "f.wav")


# ------------------------------------------------------------------- corpus

def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_corpus_deterministic(tmp_path):
    generate_toy_corpus(tmp_path / "a", 3, 6, 0.3)
    generate_toy_corpus(tmp_path / "b", 3, 6, 0.3)
    generate_toy_corpus(tmp_path / "c", 4, 6, 0.3)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_corpus_snrs_and_index(tmp_path):
    index = generate_toy_corpus(tmp_path, 0, 8, 0.3, test_count=4)
    train, test = index.split("train"), index.split("test")
    assert len(train) == 8 and len(test) == 4
    assert {e.snr_db for e in train} == set(TRAIN_SNRS)
    assert {e.snr_db for e in test} == set(TEST_SNRS)
    index.validate()
    loaded = CorpusIndex.load(tmp_path)
    assert loaded.entries == index.entries
    data = json.loads((tmp_path / "index.json").read_text())
    assert len(data["entries"]) == 12
    for e in train:
        clean = read_wav(tmp_path / e.clean).samples
        noisy = read_wav(tmp_path / e.noisy).samples
        # 16-bit storage perturbs the measured SNR slightly
        assert abs(10 * math.log10(power(clean) / power(noisy - clean)) - e.snr_db) < 0.05


def test_corpus_errors(tmp_path):
    with pytest.raises(DataError):
        generate_toy_corpus(tmp_path, 0, 0)
    (tmp_path / "file").write_text("")
    with pytest.raises(DataError, match="not writable"):
        generate_toy_corpus(tmp_path / "file" / "sub", 0, 1)
    with pytest.raises(DataError, match="no corpus index"):
        CorpusIndex.load(tmp_path)


def test_index_directory(tmp_path):
    for name in ("a.wav", "b.wav"):
        write_wav(tmp_path / "clean" / name, np.zeros(1600))
        write_wav(tmp_path / "noisy" / name, np.zeros(1600))
    index = index_directory(tmp_path)
    assert [e.id for e in index.entries] == ["a", "b"]
    assert index.entries[0].duration == 0.1
    write_wav(tmp_path / "noisy" / "c.wav", np.zeros(1600))
    with pytest.raises(DataError, match="unpaired.*c.wav"):
        index_directory(tmp_path)


def test_epoch_order_is_seeded_permutation():
    a = epoch_order(50, 1, 0)
    assert sorted(a.tolist()) == list(range(50))
    np.testing.assert_array_equal(a, epoch_order(50, 1, 0))
    assert not np.array_equal(a, epoch_order(50, 1, 1))
    assert not np.array_equal(a, epoch_order(50, 2, 0))
