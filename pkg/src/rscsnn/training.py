"""Losses, SGD, and the training loops (plain, E-RSCT distillation, adversarial).

E-RSCT minimises ``lambda_kd * KL(teacher || student) + L_PS`` where the
student logits fed to the KL term are the time-mean SNN logits, the teacher
is a frozen ANN evaluated on the clean input, and ``L_PS`` is the per-timestep
cross-entropy averaged over time.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .attacks import AttackConfig, fgsm
from .coding import CodingConfig, derive_seed
from .model import Classifier
from .snn import Network, NetworkSpec
from .tensor import Tensor

LOSS_MODES = ("ce_mean", "presynaptic", "e_rsct")
SCHEDULES = ("constant", "cosine")


class NumericDivergence(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_schedule: str = "cosine"
    lambda_kd: float = 0.1
    loss_mode: str = "presynaptic"
    adv_train: str | None = None
    epsilon_train: float = 2 / 255
    adv_mix: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.lambda_kd < 0:
            raise ValueError("lambda_kd must be >= 0")
        if self.lr_schedule not in SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {SCHEDULES}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.adv_train not in (None, "fgsm"):
            raise ValueError("adv_train must be None or 'fgsm'")
        if self.epsilon_train < 0:
            raise ValueError("epsilon_train must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


# -- losses --------------------------------------------------------------------

def loss_ce_mean(timestep_logits: Tensor, y) -> Tensor:
    return tn.cross_entropy(tn.mean(timestep_logits, axis=0), y)


def loss_presynaptic(timestep_logits: Tensor, y) -> Tensor:
    """Cross-entropy of every timestep's logits, averaged over time."""
    T = timestep_logits.shape[0]
    if T < 1:
        raise ValueError("need at least one timestep")
    k = timestep_logits.shape[-1]
    flat = tn.reshape(timestep_logits, (-1, k))
    return tn.cross_entropy(flat, np.tile(np.asarray(y), T))


def loss_kd(student_logits: Tensor, teacher_logits) -> Tensor:
    """KL(softmax(teacher) || softmax(student)), batch mean."""
    teacher = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits)
    if teacher.shape != student_logits.shape:
        raise ValueError(f"class-count mismatch: student {student_logits.shape} vs teacher {teacher.shape}")
    q = tn.softmax(Tensor(teacher), axis=-1).data
    return tn.kl_divergence(tn.log_softmax(student_logits, axis=-1), q)


def loss_ersct(timestep_logits: Tensor, teacher_logits, y, lambda_kd: float = 0.1) -> Tensor:
    ps = loss_presynaptic(timestep_logits, y)
    if lambda_kd == 0:
        return ps
    kd = loss_kd(tn.mean(timestep_logits, axis=0), teacher_logits)
    return tn.add(tn.scalar_mul(kd, lambda_kd), ps)


# -- optimiser -------------------------------------------------------------------

class SGD:
    """SGD with momentum and L2 weight decay (decay added to the gradient)."""

    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buf = [None] * len(self.params)

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            if self.momentum:
                self.buf[i] = g.copy() if self.buf[i] is None else self.momentum * self.buf[i] + g
                g = self.buf[i]
            p.data = p.data - self.lr * g

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(base: float, epoch: int, epochs: int) -> float:
    return 0.5 * base * (1.0 + math.cos(math.pi * epoch / max(epochs, 1)))


# -- teacher ----------------------------------------------------------------------

@dataclass
class TeacherModel:
    """A trained ANN whose parameters are read-only."""

    classifier: Classifier

    def __post_init__(self):
        for p in self.classifier.net.parameters():
            p.data = p.data.copy()
            p.data.setflags(write=False)
            p.requires_grad = False

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.classifier.predict_logits(x)

    def param_hash(self) -> str:
        return hashlib.sha256(self.classifier.net.flat_parameters().tobytes()).hexdigest()


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    loss_ps: float
    loss_kd: float
    train_accuracy: float
    val_accuracy: float = float("nan")
    lr: float = 0.0


@dataclass
class TrainResult:
    classifier: Classifier
    history: list[EpochMetrics] = field(default_factory=list)


def _batch_loss(model: Classifier, xb, yb, idb, cfg: TrainConfig, noise_seed: int,
                teacher: TeacherModel | None):
    noise = model.draw_noise(idb, noise_seed)
    out = model.timestep_logits(Tensor(xb), noise, training=True)
    kd_val = 0.0
    if cfg.loss_mode == "ce_mean":
        loss = loss_ce_mean(out, yb)
        ps_val = loss.item()
    elif cfg.loss_mode == "presynaptic":
        loss = loss_presynaptic(out, yb)
        ps_val = loss.item()
    else:
        ps = loss_presynaptic(out, yb)
        kd = loss_kd(tn.mean(out, axis=0), teacher.logits(xb))
        loss = tn.add(tn.scalar_mul(kd, cfg.lambda_kd), ps)
        ps_val, kd_val = ps.item(), kd.item()
    return loss, out, ps_val, kd_val


def train(model: Classifier, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          teacher: TeacherModel | None = None, val: tuple[np.ndarray, np.ndarray] | None = None,
          progress=None) -> TrainResult:
    """Minibatch SGD over ``(x, y)``; the model's parameters are updated in place.

    Coding noise is redrawn for every batch. With ``cfg.adv_train='fgsm'`` each
    batch is replaced (or, with ``adv_mix``, half-replaced) by FGSM examples at
    ``cfg.epsilon_train`` crafted against the current parameters.
    """
    if cfg.loss_mode == "e_rsct" and teacher is None:
        raise ValueError("loss_mode 'e_rsct' requires a teacher model")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    net = model.net
    opt = SGD(net.parameters(), cfg.learning_rate, cfg.momentum, cfg.weight_decay)
    order_rng = np.random.default_rng(derive_seed(cfg.seed, 101))
    result = TrainResult(model)
    n = len(x)
    for epoch in range(cfg.epochs):
        lr = cfg.learning_rate if cfg.lr_schedule == "constant" else cosine_lr(cfg.learning_rate, epoch, cfg.epochs)
        opt.lr = lr
        perm = order_rng.permutation(n)
        tot = tot_ps = tot_kd = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idb = perm[start:start + cfg.batch_size]
            xb, yb = x[idb], y[idb]
            noise_seed = derive_seed(cfg.seed, 102, epoch, b)
            if cfg.adv_train == "fgsm":
                acfg = AttackConfig("fgsm", epsilon=cfg.epsilon_train, seed=derive_seed(cfg.seed, 103, epoch, b))
                adv = fgsm(model, xb, yb, acfg, sample_ids=idb).adversarials
                if cfg.adv_mix:
                    half = len(xb) // 2
                    xb = np.concatenate([xb[:half], adv[half:]])
                else:
                    xb = adv
            loss, out, ps_val, kd_val = _batch_loss(model, xb, yb, idb, cfg, noise_seed, teacher)
            if not np.isfinite(loss.item()):
                raise NumericDivergence(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            tn.backward(loss)
            opt.step()
            m = len(idb)
            tot += loss.item() * m
            tot_ps += ps_val * m
            tot_kd += kd_val * m
            correct += int((out.data.mean(axis=0).argmax(axis=1) == yb).sum())
        metrics = EpochMetrics(epoch, tot / max(n, 1), tot_ps / max(n, 1), tot_kd / max(n, 1),
                               correct / max(n, 1), lr=lr)
        if val is not None:
            metrics.val_accuracy = model.accuracy(val[0], val[1], seed=derive_seed(cfg.seed, 104, epoch))
        result.history.append(metrics)
        if progress is not None:
            progress(metrics)
    return result


def train_adversarial(model: Classifier, x, y, cfg: TrainConfig, **kwargs) -> TrainResult:
    if cfg.adv_train is None:
        raise ValueError("train_adversarial needs cfg.adv_train set")
    return train(model, x, y, cfg, **kwargs)


def train_teacher_ann(spec: NetworkSpec, x, y, cfg: TrainConfig, seed: int = 0) -> TeacherModel:
    """Train the ANN twin of ``spec`` (LIF layers act as ReLU) and freeze it."""
    net = Network(spec, seed=seed, ann=True)
    model = Classifier(net, None)
    mode = "ce_mean" if cfg.loss_mode == "e_rsct" else cfg.loss_mode
    train(model, x, y, TrainConfig(**{**cfg.to_dict(), "loss_mode": mode, "adv_train": None}))
    return TeacherModel(model)


def make_student(spec: NetworkSpec, coding: CodingConfig, seed: int = 0) -> Classifier:
    return Classifier(Network(spec, seed=seed), coding)
