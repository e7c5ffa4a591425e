"""Gradient-based l-inf attacks driven by BPTT: FGSM, PGD, EOT-PGD, transfer.

Against a stochastic coder, FGSM and PGD freeze one coding-noise realisation
(seeded by ``cfg.seed``) for every gradient of a run; EOT-PGD averages each
step's gradient over ``eot_samples`` fresh realisations. Success flags are
computed on a separate, freshly drawn evaluation realisation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import tensor as tn
from .coding import derive_seed
from .model import Classifier
from .tensor import Tensor

FAMILIES = ("fgsm", "pgd", "eotpgd")

# stream tags for derive_seed
_FROZEN, _EOT, _EVAL, _START = 1, 2, 3, 4


@dataclass(frozen=True)
class AttackConfig:
    family: str = "pgd"
    epsilon: float = 8 / 255
    alpha: float = 0.01
    steps: int = 7
    eot_samples: int = 8
    random_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown attack family {self.family!r}; expected one of {FAMILIES}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.family != "fgsm":
            if self.alpha <= 0:
                raise ValueError(f"alpha must be > 0, got {self.alpha}")
            if self.steps < 1:
                raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.family == "eotpgd" and self.eot_samples < 1:
            raise ValueError(f"eot_samples must be >= 1, got {self.eot_samples}")

    @property
    def name(self) -> str:
        return self.family

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdversarialBatch:
    originals: np.ndarray
    adversarials: np.ndarray
    labels: np.ndarray
    success: np.ndarray

    def linf(self) -> np.ndarray:
        diff = np.abs(self.adversarials - self.originals)
        return diff.reshape(len(diff), -1).max(axis=1)


@dataclass
class RobustnessEntry:
    name: str
    accuracy: float
    n: int
    epsilon: float
    source: str = "white-box"


def input_gradient(model: Classifier, x: np.ndarray, y: np.ndarray, noise) -> np.ndarray:
    """d CE(time-mean logits, y) / d x for one fixed coding-noise realisation."""
    xt = Tensor(x, requires_grad=True)
    loss = tn.cross_entropy(model.logits(xt, noise), y)
    tn.backward(loss)
    return xt.grad


def _ids(x, sample_ids):
    return np.arange(len(x)) if sample_ids is None else np.asarray(sample_ids)


def _finish(model, x, x_adv, y, cfg, ids) -> AdversarialBatch:
    pred = model.predict(x_adv, seed=eval_seed_of(cfg), sample_ids=ids)
    return AdversarialBatch(x, x_adv, np.asarray(y), pred != np.asarray(y))


def project(x_adv: np.ndarray, x: np.ndarray, epsilon: float) -> np.ndarray:
    """Project onto the l-inf ball of radius ``epsilon`` around ``x``, then onto [0, 1]."""
    return np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)


def fgsm(model: Classifier, x, y, cfg: AttackConfig, sample_ids=None) -> AdversarialBatch:
    """One signed-gradient step of size epsilon, clamped to [0, 1]."""
    if cfg.epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    ids = _ids(x, sample_ids)
    noise = model.draw_noise(ids, derive_seed(cfg.seed, _FROZEN))
    g = input_gradient(model, x, y, noise)
    x_adv = np.clip(x + cfg.epsilon * np.sign(g), 0.0, 1.0)
    return _finish(model, x, x_adv, y, cfg, ids)


def pgd(model: Classifier, x, y, cfg: AttackConfig, sample_ids=None,
        callback: Callable[[int, np.ndarray], None] | None = None,
        eot: bool = False, fresh_noise: bool = True) -> AdversarialBatch:
    """Iterated signed-gradient ascent with l-inf projection after every step.

    With ``eot=True`` the step gradient is the mean over ``cfg.eot_samples``
    coding-noise draws, fresh per step unless ``fresh_noise=False``.
    """
    x = np.asarray(x, dtype=np.float64)
    ids = _ids(x, sample_ids)
    if cfg.random_start:
        rng = np.random.default_rng(derive_seed(cfg.seed, _START))
        x_adv = np.clip(x + rng.uniform(-cfg.epsilon, cfg.epsilon, x.shape), 0.0, 1.0)
    else:
        x_adv = x.copy()
    frozen = model.draw_noise(ids, derive_seed(cfg.seed, _FROZEN))
    for k in range(cfg.steps):
        if eot:
            g = np.zeros_like(x)
            for j in range(cfg.eot_samples):
                noise = model.draw_noise(ids, derive_seed(cfg.seed, _EOT, k, j)) if fresh_noise else frozen
                g += input_gradient(model, x_adv, y, noise)
            g /= cfg.eot_samples
        else:
            g = input_gradient(model, x_adv, y, frozen)
        x_adv = project(x_adv + cfg.alpha * np.sign(g), x, cfg.epsilon)
        if callback is not None:
            callback(k, x_adv)
    return _finish(model, x, x_adv, y, cfg, ids)


def eot_pgd(model: Classifier, x, y, cfg: AttackConfig, sample_ids=None,
            fresh_noise: bool = True, callback=None) -> AdversarialBatch:
    if cfg.eot_samples < 1:
        raise ValueError("eot_samples must be >= 1")
    return pgd(model, x, y, cfg, sample_ids, callback=callback, eot=True, fresh_noise=fresh_noise)


def run_attack(model: Classifier, x, y, cfg: AttackConfig, sample_ids=None,
               batch_size: int = 128) -> AdversarialBatch:
    """Dispatch on ``cfg.family``, processing the data in batches."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    ids = _ids(x, sample_ids)
    fn = {"fgsm": fgsm, "pgd": pgd, "eotpgd": eot_pgd}[cfg.family]
    parts = [fn(model, x[s:s + batch_size], y[s:s + batch_size], cfg, ids[s:s + batch_size])
             for s in range(0, len(x), batch_size)]
    return AdversarialBatch(
        x, np.concatenate([p.adversarials for p in parts]), y,
        np.concatenate([p.success for p in parts]),
    )


def blackbox_transfer(source: Classifier, target: Classifier, x, y, cfg: AttackConfig,
                      sample_ids=None, eval_seed: int | None = None) -> RobustnessEntry:
    """Craft adversarials on ``source`` and report ``target`` accuracy on them."""
    if source.input_shape != target.input_shape or source.num_classes != target.num_classes:
        raise ValueError(
            f"source ({source.input_shape}, {source.num_classes} classes) and target "
            f"({target.input_shape}, {target.num_classes} classes) are incompatible"
        )
    adv = run_attack(source, x, y, cfg, sample_ids)
    seed = derive_seed(cfg.seed, _EVAL) if eval_seed is None else eval_seed
    acc = target.accuracy(adv.adversarials, y, seed=seed, sample_ids=sample_ids)
    src = source.coding.scheme if source.coding else "ann"
    dst = target.coding.scheme if target.coding else "ann"
    return RobustnessEntry(f"blackbox-{cfg.family}", acc, len(x), cfg.epsilon, f"{src}->{dst}")


def random_sampling_attack(model: Classifier, x, y, epsilon: float, n_draws: int = 1000,
                           seed: int = 0, eval_seed: int | None = None, sample_ids=None) -> np.ndarray:
    """Per sample: True if any of ``n_draws`` uniform points in the eps-ball is misclassified.

    All points of sample ``i`` are scored on the coding-noise realisation that
    ``(eval_seed, sample_ids[i])`` selects, so against a stochastic coder the
    search explores input perturbations only, not lucky noise draws. With
    ``eval_seed`` left as None a seed is derived from ``seed``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    ids = _ids(x, sample_ids)
    ev = derive_seed(seed, 12) if eval_seed is None else eval_seed
    found = np.zeros(len(x), dtype=bool)
    for i in range(len(x)):
        rng = np.random.default_rng(derive_seed(seed, 11, i))
        pts = np.clip(x[i][None] + rng.uniform(-epsilon, epsilon, (n_draws, *x.shape[1:])), 0.0, 1.0)
        pred = model.predict(pts, seed=ev, sample_ids=np.full(n_draws, ids[i]))
        found[i] = bool(np.any(pred != y[i]))
    return found


def eval_seed_of(cfg: AttackConfig) -> int:
    """Seed of the noise realisation used to score an attack's success flags."""
    return derive_seed(cfg.seed, _EVAL)
