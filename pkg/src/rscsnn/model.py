"""A network paired with its input coder: the object attacks and training act on."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as tn
from .coding import CodingConfig, apply_coding, derive_seed, draw_noise
from .snn import Network, snn_forward
from .tensor import Tensor


class Classifier:
    """SNN (with a coding layer) or ANN (``coding=None``) classifier.

    The readout is the time-mean of the per-timestep logits.
    """

    def __init__(self, net: Network, coding: CodingConfig | None = None):
        if coding is None and not net.ann:
            raise ValueError("an SNN classifier needs a coding config")
        self.net = net
        self.coding = coding

    @property
    def num_classes(self) -> int:
        return self.net.num_classes

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.net.spec.input_shape)

    @property
    def stochastic(self) -> bool:
        return self.coding is not None and self.coding.stochastic

    def draw_noise(self, n_or_ids, seed: int):
        if self.coding is None:
            return None
        ids = range(n_or_ids) if isinstance(n_or_ids, int) else n_or_ids
        c = self.coding
        return draw_noise(c.scheme, c.T, c.sigma2, self.input_shape, seed, list(ids))

    def timestep_logits(self, x: Tensor, noise=None, training: bool = False) -> Tensor:
        """Per-timestep logits, shape (T, N, classes); (1, N, classes) for an ANN."""
        if self.coding is None:
            return tn.stack([self.net.forward_step(x, None, training)], axis=0)
        frames = apply_coding(x, self.coding.scheme, self.coding.T, noise)
        return snn_forward(self.net, frames, training=training)

    def logits(self, x: Tensor, noise=None, training: bool = False) -> Tensor:
        return tn.mean(self.timestep_logits(x, noise, training), axis=0)

    def predict_logits(self, x: np.ndarray, seed: int = 0, sample_ids: Sequence[int] | None = None,
                       n_draws: int = 1, batch_size: int = 256) -> np.ndarray:
        """Mean logits over ``n_draws`` coding-noise draws (eval mode, no graph)."""
        x = np.asarray(x, dtype=np.float64)
        ids = np.arange(len(x)) if sample_ids is None else np.asarray(sample_ids)
        out = np.zeros((len(x), self.num_classes))
        for start in range(0, len(x), batch_size):
            xb = x[start:start + batch_size]
            idb = ids[start:start + batch_size]
            acc = np.zeros((len(xb), self.num_classes))
            for d in range(n_draws if self.stochastic else 1):
                noise = self.draw_noise(idb, derive_seed(seed, d))
                acc += self.logits(Tensor(xb), noise).data
            out[start:start + batch_size] = acc / (n_draws if self.stochastic else 1)
        return out

    def predict(self, x: np.ndarray, seed: int = 0, sample_ids=None, n_draws: int = 1,
                vote: bool = False) -> np.ndarray:
        """Class predictions; ``vote=True`` takes the majority over noise draws."""
        if not vote or not self.stochastic:
            return self.predict_logits(x, seed, sample_ids, n_draws).argmax(axis=1)
        votes = np.zeros((len(x), self.num_classes), dtype=np.int64)
        rows = np.arange(len(x))
        for d in range(n_draws):
            pred = self.predict_logits(x, derive_seed(seed, 7919, d), sample_ids, 1).argmax(axis=1)
            votes[rows, pred] += 1
        return votes.argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray, seed: int = 0, sample_ids=None,
                 n_draws: int = 1, vote: bool = False) -> float:
        return float(np.mean(self.predict(x, seed, sample_ids, n_draws, vote) == np.asarray(y)))
