"""Input coding layers: direct, Poisson, and randomized smoothing (RSC-I/II).

Random streams
--------------
All randomness comes from numpy's PCG64. Sample ``i`` of a call seeded with
``seed`` draws from ``PCG64(SeedSequence(seed, spawn_key=(i,)))``:

* Poisson: one ``random((T, *dims))`` call; frame ``t`` spikes where
  ``U[t] < x``.
* RSC-I: one ``standard_normal(dims)`` call, scaled by ``sqrt(sigma2)``,
  shared by all ``T`` frames.
* RSC-II: one ``standard_normal((T, *dims))`` call, frame ``t`` uses slice ``t``.

Streams depend only on ``(seed, sample index, t)``, never on call order or
batch composition. Callers needing several independent streams (epochs,
attack steps, evaluation) derive seeds with :func:`derive_seed`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor

SCHEMES = ("direct", "poisson", "rsc1", "rsc2")
RNG_ID = "numpy-PCG64-SeedSequence"

# timestep defaults for the VGG-scale settings
DEFAULT_T = {"direct": 8, "poisson": 16, "rsc1": 8, "rsc2": 8}


class DomainError(ValueError):
    """Input outside the [0, 1] pixel domain."""


@dataclass(frozen=True)
class CodingConfig:
    scheme: str = "rsc1"
    T: int = 8
    sigma2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown coding scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.sigma2 < 0:
            raise ValueError(f"sigma2 must be nonnegative, got {self.sigma2}")

    @classmethod
    def default(cls, scheme: str, sigma2: float = 0.0, seed: int = 0) -> "CodingConfig":
        return cls(scheme, DEFAULT_T[scheme], sigma2, seed)

    @property
    def stochastic(self) -> bool:
        return self.scheme == "poisson" or (self.scheme in ("rsc1", "rsc2") and self.sigma2 > 0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SpikeSequence:
    """Time-major coded input: ``frames[t]`` is what the network sees at step t."""

    frames: np.ndarray
    binary: bool = False

    @property
    def T(self) -> int:
        return self.frames.shape[0]


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically derive an independent 63-bit seed from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed),
                                                                      spawn_key=(int(sample_id),))))


def _check_domain(x: np.ndarray) -> None:
    if x.size and (np.isnan(x).any() or x.min() < 0.0 or x.max() > 1.0):
        raise DomainError(f"inputs must lie in [0, 1]; got range [{x.min()}, {x.max()}]")


def draw_noise(scheme: str, T: int, sigma2: float, dims: tuple[int, ...], seed: int,
               sample_ids: Sequence[int]) -> np.ndarray | None:
    """Raw randomness for a batch with per-sample shape ``dims``.

    Returns uniforms of shape (T, N, *dims) for Poisson, Gaussian noise of
    shape (N, *dims) for RSC-I and (T, N, *dims) for RSC-II, ``None`` for direct.
    """
    if scheme == "direct":
        return None
    sigma = float(np.sqrt(sigma2))
    draws = []
    for sid in sample_ids:
        rng = sample_rng(seed, sid)
        if scheme == "poisson":
            draws.append(rng.random((T, *dims)))
        elif scheme == "rsc1":
            draws.append(rng.standard_normal(dims) * sigma)
        elif scheme == "rsc2":
            draws.append(rng.standard_normal((T, *dims)) * sigma)
        else:
            raise ValueError(f"unknown coding scheme {scheme!r}")
    axis = 0 if scheme == "rsc1" else 1
    return np.stack(draws, axis=axis)


def apply_coding(x: Tensor, scheme: str, T: int, noise: np.ndarray | None) -> list[Tensor]:
    """Differentiable coding of a batch ``x`` (N, *dims) into ``T`` frames.

    Gradients reach ``x`` through the RSC clamp, and through Poisson spikes via
    a straight-through estimator (d spike / d x = 1).
    """
    if scheme == "direct":
        return [x] * T
    if scheme == "poisson":
        spikes = (noise < x.data[None]).astype(np.float64)
        return [tn.straight_through(x, spikes[t]) for t in range(T)]
    if scheme == "rsc1":
        frame = tn.clamp(tn.add(x, noise), 0.0, 1.0)
        return [frame] * T
    if scheme == "rsc2":
        return [tn.clamp(tn.add(x, noise[t]), 0.0, 1.0) for t in range(T)]
    raise ValueError(f"unknown coding scheme {scheme!r}")


def encode(x, cfg: CodingConfig, seed: int | None = None,
           sample_ids: Sequence[int] | None = None) -> SpikeSequence:
    """Code ``x`` with ``cfg``; frames have shape (T, *x.shape).

    Without ``sample_ids`` the whole of ``x`` is one sample (stream index 0);
    otherwise the leading axis of ``x`` indexes samples.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_domain(x)
    seed = cfg.seed if seed is None else seed
    if sample_ids is None:
        batch, ids = x[None], [0]
    else:
        ids = list(sample_ids)
        if len(ids) != x.shape[0]:
            raise ValueError(f"{len(ids)} sample ids for a batch of {x.shape[0]}")
        batch = x
    noise = draw_noise(cfg.scheme, cfg.T, cfg.sigma2, batch.shape[1:], seed, ids)
    frames = np.stack([f.data for f in apply_coding(Tensor(batch), cfg.scheme, cfg.T, noise)])
    if sample_ids is None:
        frames = frames[:, 0]
    return SpikeSequence(frames, binary=cfg.scheme == "poisson")


def encode_direct(x, T: int) -> SpikeSequence:
    return encode(x, CodingConfig("direct", T))


def encode_poisson(x, T: int, seed: int = 0, sample_ids=None) -> SpikeSequence:
    return encode(x, CodingConfig("poisson", T, seed=seed), sample_ids=sample_ids)


def encode_rsc1(x, T: int, sigma2: float, seed: int = 0, sample_ids=None) -> SpikeSequence:
    return encode(x, CodingConfig("rsc1", T, sigma2, seed), sample_ids=sample_ids)


def encode_rsc2(x, T: int, sigma2: float, seed: int = 0, sample_ids=None) -> SpikeSequence:
    return encode(x, CodingConfig("rsc2", T, sigma2, seed), sample_ids=sample_ids)
