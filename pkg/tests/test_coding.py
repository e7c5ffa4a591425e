import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rscsnn import tensor as tn
from rscsnn.coding import (DEFAULT_T, CodingConfig, DomainError, apply_coding, derive_seed, draw_noise, encode,
                           encode_direct, encode_poisson, encode_rsc1, encode_rsc2)
from rscsnn.tensor import Tensor

N_RESAMPLE = 100_000


def test_direct_repeats():
    np.testing.assert_array_equal(encode_direct([0.3], 3).frames, [[0.3], [0.3], [0.3]])
    x = np.random.default_rng(0).random(5)
    seq = encode_direct(x, 1)
    assert seq.T == 1 and np.array_equal(seq.frames[0], x)
    for T in (7, 8):
        np.testing.assert_allclose(encode_direct(x, T).frames.mean(axis=0), x, rtol=1e-15, atol=0)


@pytest.mark.parametrize("enc", [
    lambda x: encode_direct(x, 2), lambda x: encode_poisson(x, 2),
    lambda x: encode_rsc1(x, 2, 0.1), lambda x: encode_rsc2(x, 2, 0.1),
])
def test_domain_errors(enc):
    for bad in ([-0.1, 0.5], [0.5, 1.01], [np.nan]):
        with pytest.raises(DomainError):
            enc(np.array(bad))


def test_poisson_degenerate():
    seq = encode_poisson(np.array([0.0, 1.0]), 50, seed=1)
    assert not seq.frames[:, 0].any() and seq.frames[:, 1].all()
    assert seq.binary


def test_poisson_rate_and_variance():
    m = encode_poisson(np.array([0.5]), 10_000, seed=2).frames.mean()
    assert abs(m - 0.5) < 0.02
    v = encode_poisson(np.array([0.2]), N_RESAMPLE, seed=3).frames.var()
    assert abs(v - 0.16) < 0.005


def test_poisson_per_sample_streams_independent_of_batch():
    x = np.random.default_rng(4).random((6, 3))
    full = encode_poisson(x, 4, seed=9, sample_ids=range(6)).frames
    part = encode_poisson(x[2:4], 4, seed=9, sample_ids=[2, 3]).frames
    assert np.array_equal(full[:, 2:4], part)


def test_rsc_zero_noise_is_direct():
    x = np.random.default_rng(5).random(4)
    for enc in (encode_rsc1, encode_rsc2):
        assert np.array_equal(enc(x, 3, 0.0, seed=1).frames, encode_direct(x, 3).frames)


def test_rsc1_frames_time_constant():
    x = np.random.default_rng(6).random(10)
    f = encode_rsc1(x, 8, 0.2, seed=3).frames
    for t in range(8):
        assert np.array_equal(f[t], f[0])


def test_rsc1_moments():
    x = np.full((N_RESAMPLE, 1), 0.5)
    f0 = encode_rsc1(x, 1, 0.01, seed=7, sample_ids=range(N_RESAMPLE)).frames[0, :, 0]
    assert abs(f0.mean() - 0.5) < 0.002
    assert abs(f0.std() - 0.1) < 0.003


def test_rsc2_frames_differ():
    x = np.array([0.5, 0.5])
    for trial in range(100):
        f = encode_rsc2(x, 2, 0.1, seed=trial).frames
        assert not np.array_equal(f[0], f[1])


def test_rsc2_time_mean():
    m = encode_rsc2(np.array([0.5]), 10_000, 0.04, seed=8).frames.mean()
    assert abs(m - 0.5) < 0.01


def test_expectation_matching_interior():
    rng = np.random.default_rng(9)
    x = rng.uniform(0.45, 0.55, 4)
    n = 20_000
    sigma = 0.02 ** 0.5
    tile = np.tile(x, (n, 1))
    ids = range(n)
    for cfg, sd in ((CodingConfig("poisson", 1), np.sqrt(x * (1 - x))),
                    (CodingConfig("rsc1", 1, 0.02), sigma),
                    (CodingConfig("rsc2", 1, 0.02), sigma)):
        m = encode(tile, cfg, seed=10, sample_ids=ids).frames[0].mean(axis=0)
        assert np.all(np.abs(m - x) < 5 * sd / np.sqrt(n))


def test_determinism():
    x = np.random.default_rng(11).random((3, 2, 2))
    for scheme in ("poisson", "rsc1", "rsc2"):
        cfg = CodingConfig(scheme, 4, 0.1, seed=5)
        a = encode(x, cfg, sample_ids=range(3)).frames
        b = encode(x, cfg, sample_ids=range(3)).frames
        assert a.tobytes() == b.tobytes()


def test_config_validation_and_defaults():
    with pytest.raises(ValueError):
        CodingConfig("temporal")
    with pytest.raises(ValueError):
        CodingConfig("rsc1", T=0)
    with pytest.raises(ValueError):
        CodingConfig("rsc1", sigma2=-0.1)
    assert DEFAULT_T == {"direct": 8, "poisson": 16, "rsc1": 8, "rsc2": 8}
    assert CodingConfig.default("poisson").T == 16
    assert not CodingConfig("rsc1", sigma2=0).stochastic


def test_derive_seed_distinct_and_stable():
    seeds = {derive_seed(0, a, b) for a in range(20) for b in range(20)}
    assert len(seeds) == 400
    assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2) < 2**63


def test_rsc_gradient_masks_clamped_pixels():
    x = Tensor(np.array([[0.5, 0.02, 0.98]]), requires_grad=True)
    noise = np.array([[0.1, -0.5, 0.5]])
    frames = apply_coding(x, "rsc1", 3, noise)
    tn.backward(tn.sum_(tn.stack(frames)))
    np.testing.assert_array_equal(x.grad, [[3.0, 0.0, 0.0]])


def test_poisson_straight_through_gradient():
    x = Tensor(np.array([[0.3, 0.7]]), requires_grad=True)
    noise = draw_noise("poisson", 5, 0.0, (2,), 0, [0])
    tn.backward(tn.sum_(tn.stack(apply_coding(x, "poisson", 5, noise))))
    np.testing.assert_array_equal(x.grad, [[5.0, 5.0]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(0, 1)),
       st.sampled_from(["direct", "poisson", "rsc1", "rsc2"]), st.floats(0, 1), st.integers(0, 2**32))
def test_frames_in_unit_interval(x, scheme, sigma2, seed):
    f = encode(x, CodingConfig(scheme, 3, sigma2, seed)).frames
    assert f.shape == (3, *x.shape)
    assert np.all(f >= 0) and np.all(f <= 1)
    if scheme == "poisson":
        assert set(np.unique(f)) <= {0.0, 1.0}
