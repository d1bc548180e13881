import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stavis import tensor as T
from stavis.audio import (
    AudioNetConfig,
    audio_forward,
    crop_and_window,
    hanning,
    init_audio_params,
    segment_length,
    to_mono,
)
from stavis.errors import ConfigError, ShapeError
from stavis.gradcheck import grad_check

SR, FPS = 8000, 25.0
TINY = AudioNetConfig(channels=(2, 2, 2, 2, 2, 2, 3))


def test_hanning_closed_form():
    np.testing.assert_allclose(hanning(5), [0, 0.5, 1, 0.5, 0], atol=1e-15)
    assert hanning(1).tolist() == [1.0]


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5000))
def test_hanning_symmetric_with_zero_ends(n):
    w = hanning(n)
    assert w[0] == 0.0 and w[-1] == 0.0
    assert np.array_equal(w, w[::-1])


def test_crop_constant_track():
    seg = crop_and_window(np.ones(10), 5, clip_center=1.0, fps=1.0, n_frames=1)
    np.testing.assert_allclose(seg.samples, [0, 0.5, 1, 0.5, 0], atol=1e-15)


def test_crop_length_and_alignment():
    track = np.ones(SR * 4)
    seg = crop_and_window(track, SR, clip_center=50.0, fps=FPS)
    assert seg.samples.size == segment_length(SR, FPS) == round(16 * SR / FPS)
    assert seg.duration == pytest.approx(16 / FPS, abs=1 / SR)
    assert seg.t_start == pytest.approx((50 - 8) / FPS)


def test_crop_at_track_start_is_zero_padded():
    track = np.ones(SR * 2)
    seg = crop_and_window(track, SR, clip_center=0.0, fps=FPS)
    half = seg.samples.size // 2
    assert not seg.samples[:half].any()
    np.testing.assert_allclose(seg.samples[half:], hanning(seg.samples.size)[half:], atol=1e-15)


def test_crop_errors_and_stereo():
    with pytest.raises(ValueError):
        crop_and_window(np.zeros(0), SR, 0.0, FPS)
    np.testing.assert_array_equal(to_mono([[1.0, 3.0], [2.0, 4.0]]), [2.0, 3.0])


def test_zero_waveform_gives_zero_embedding():
    cfg = AudioNetConfig()
    f_a = audio_forward(np.zeros(segment_length(SR, FPS)), init_audio_params(cfg, np.random.default_rng(0)), cfg)
    assert f_a.shape == (cfg.out_dim,) and not f_a.data.any()


@pytest.mark.parametrize("scale", [0.5, 1.0, 1.5, 2.0])
def test_embedding_dim_independent_of_duration(scale):
    cfg = AudioNetConfig()
    params = init_audio_params(cfg, np.random.default_rng(1))
    n = int(segment_length(SR, FPS) * scale)
    f_a = audio_forward(np.random.default_rng(2).uniform(-1, 1, n), params, cfg)
    assert f_a.shape == (cfg.out_dim,)


def test_short_segment_padded_with_warning():
    cfg = AudioNetConfig()
    params = init_audio_params(cfg, np.random.default_rng(3))
    with pytest.warns(UserWarning, match="zero-padded"):
        f_a = audio_forward(np.ones(10), params, cfg)
    assert f_a.shape == (cfg.out_dim,)
    assert cfg.output_length(cfg.min_length()) >= 1 and cfg.output_length(cfg.min_length() - 1) < 1


def test_batch_and_errors():
    cfg = AudioNetConfig()
    params = init_audio_params(cfg, np.random.default_rng(4))
    x = np.random.default_rng(5).uniform(-1, 1, (3, 2000))
    batched = audio_forward(x, params, cfg).data
    assert batched.shape == (3, cfg.out_dim)
    np.testing.assert_allclose(batched[1], audio_forward(x[1], params, cfg).data, atol=1e-12)
    with pytest.raises(ShapeError):
        audio_forward(x, params, AudioNetConfig(channels=(8, 16, 32, 64, 64, 128, 32)))
    with pytest.raises(ConfigError):
        AudioNetConfig(kernels=(4,) * 6)


def test_impulse_translation_invariance():
    cfg = AudioNetConfig()
    params = init_audio_params(cfg, np.random.default_rng(6))
    stride = int(np.prod(cfg.strides))
    n = segment_length(SR, FPS)
    base = np.zeros(n)
    base[n // 2 - 2 * stride] = 1.0
    ref = audio_forward(base, params, cfg).data
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for k in (1, 2, 3):
            shifted = np.roll(base, k * stride)
            np.testing.assert_allclose(audio_forward(shifted, params, cfg).data, ref, atol=1e-12)


def test_audio_gradcheck():
    params = init_audio_params(TINY, np.random.default_rng(7))
    x = np.random.default_rng(8).uniform(-1, 1, 1500)
    names = list(params)
    weights = np.random.default_rng(9).standard_normal(TINY.out_dim)

    def f(*ps):
        return T.tsum(audio_forward(x, dict(zip(names, ps)), TINY) * weights)

    report = grad_check(f, list(params.values()), max_elements=6, rng=np.random.default_rng(0), skip_kinks=True)
    assert report.passed, report
