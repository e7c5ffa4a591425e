"""Accuracy evaluation, the QTE trade-off area, and the gradient-obfuscation checklist.

QTE between attack intensities ``eta_a`` and ``eta_b`` is the trapezoid area
``|(eta_b - eta_a) * (A(eta_b) + A(eta_a)) / 2|`` with ``eta`` in units of
1/255 and accuracy ``A`` as a fraction. F-QTE and P-QTE take the clean model
(eta = 0) and the FGSM / PGD accuracy at eta = 8 as endpoints.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, blackbox_transfer, eval_seed_of, random_sampling_attack, run_attack
from .coding import derive_seed
from .model import Classifier

CHECKLIST_ITEMS = (
    "one_step_not_stronger_than_iterative",
    "whitebox_stronger_than_blackbox",
    "unbounded_attack_reaches_chance",
    "larger_budget_increases_success",
    "random_sampling_not_stronger_than_gradient",
)


@dataclass(frozen=True)
class QtePoint:
    eta: float
    accuracy: float

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must be a fraction in [0, 1]")


def qte(a: QtePoint, b: QtePoint) -> float:
    return abs((b.eta - a.eta) * (b.accuracy + a.accuracy) / 2.0)


def qte_curve(points) -> float:
    """Sum of trapezoids between consecutive points sorted by eta."""
    pts = sorted(points, key=lambda p: p.eta)
    return sum(qte(p, q) for p, q in zip(pts, pts[1:]))


def qte_from_accuracies(clean: float, attacked: float, eta: float = 8.0) -> float:
    return qte(QtePoint(0.0, clean), QtePoint(eta, attacked))


@dataclass
class RobustnessReport:
    clean_accuracy: float
    attacks: dict[str, float] = field(default_factory=dict)
    f_qte: float | None = None
    p_qte: float | None = None
    config: dict = field(default_factory=dict)
    checklist: dict[str, bool] = field(default_factory=dict)
    evidence: dict[str, str] = field(default_factory=dict)

    CSV_COLUMNS = ("metric", "value")

    def rows(self) -> list[tuple[str, str]]:
        out = [("clean", f"{self.clean_accuracy:.6f}")]
        out += [(name, f"{acc:.6f}") for name, acc in self.attacks.items()]
        if self.f_qte is not None:
            out.append(("f_qte", f"{self.f_qte:.6f}"))
        if self.p_qte is not None:
            out.append(("p_qte", f"{self.p_qte:.6f}"))
        out += [(f"check:{k}", "pass" if v else "fail") for k, v in self.checklist.items()]
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        w.writerows(self.rows())
        return buf.getvalue()

    def to_text(self) -> str:
        lines = ["# robustness report"]
        for k in sorted(self.config):
            lines.append(f"config.{k} = {self.config[k]}")
        for name, value in self.rows():
            lines.append(f"{name}: {value}")
        for k, v in self.evidence.items():
            lines.append(f"evidence.{k}: {v}")
        return "\n".join(lines) + "\n"


def attack_key(cfg: AttackConfig) -> str:
    return f"{cfg.family}@{cfg.epsilon * 255:g}/255"


def evaluate(model: Classifier, x, y, attacks=(), n_eval_noise: int = 1, seed: int = 0,
             vote: bool = False) -> RobustnessReport:
    """Clean and per-attack accuracy; F/P-QTE from the first FGSM/PGD entries.

    Stochastic coders are evaluated with ``n_eval_noise`` fresh coding draws,
    aggregated by mean logits (or majority vote with ``vote=True``). Clean and
    attacked inputs are scored on the same evaluation draws, so a zero-budget
    attack reproduces the clean accuracy exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    eval_seed = derive_seed(seed, 201)
    clean = model.accuracy(x, y, seed=eval_seed, n_draws=n_eval_noise, vote=vote)
    report = RobustnessReport(clean)
    report.config = {
        "coding": model.coding.scheme if model.coding else "ann",
        "T": model.coding.T if model.coding else 1,
        "sigma2": model.coding.sigma2 if model.coding else 0.0,
        "n_eval_noise": n_eval_noise,
        "aggregation": "vote" if vote else "mean-logit",
    }
    for i, cfg in enumerate(attacks):
        adv = run_attack(model, x, y, cfg)
        acc = model.accuracy(adv.adversarials, y, seed=eval_seed, n_draws=n_eval_noise, vote=vote)
        key = attack_key(cfg)
        report.attacks[key] = acc
        for field_name, value in cfg.to_dict().items():
            report.config[f"{key}.{field_name}"] = value
        eta = cfg.epsilon * 255.0
        if cfg.family == "fgsm" and report.f_qte is None:
            report.f_qte = qte_from_accuracies(clean, acc, eta)
        if cfg.family == "pgd" and report.p_qte is None:
            report.p_qte = qte_from_accuracies(clean, acc, eta)
    return report


def sweep_accuracy(model: Classifier, x, y, etas=(0, 2, 4, 6, 8, 16, 32, 64), steps: int = 7,
                   family: str = "pgd", seed: int = 0, eot_samples: int = 8) -> list[QtePoint]:
    """Accuracy under PGD for each budget eta/255, step size 2.5 * eps / steps.

    Every budget is scored on the same evaluation noise draw.
    """
    eval_seed = derive_seed(seed, 213)
    out = []
    for j, eta in enumerate(etas):
        eps = eta / 255.0
        if eta == 0:
            acc = model.accuracy(x, y, seed=eval_seed)
        else:
            cfg = AttackConfig(family, epsilon=eps, alpha=2.5 * eps / steps, steps=steps,
                               eot_samples=eot_samples, seed=derive_seed(seed, 212, j))
            adv = run_attack(model, x, y, cfg)
            acc = model.accuracy(adv.adversarials, y, seed=eval_seed)
        out.append(QtePoint(float(eta), acc))
    return out


def sweep_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eta_255", "epsilon", "accuracy"])
    for p in points:
        w.writerow([f"{p.eta:g}", f"{p.eta / 255:.8f}", f"{p.accuracy:.6f}"])
    return buf.getvalue()


@dataclass
class ChecklistResult:
    verdicts: dict[str, bool]
    evidence: dict[str, float | list]

    @property
    def all_pass(self) -> bool:
        return all(self.verdicts.values())


def obfuscation_checklist(model: Classifier, x, y, sibling: Classifier | None, seed: int = 0,
                          base: AttackConfig = AttackConfig(), sweep_etas=(2, 4, 6, 8, 16, 32, 64),
                          chance_margin: float = 0.05, monotone_tol: float = 0.01,
                          n_random: int = 1000, random_subsample: int = 20) -> ChecklistResult:
    """Five behavioural checks for obfuscated gradients.

    1. PGD accuracy <= FGSM accuracy.
    2. Black-box PGD from ``sibling`` leaves accuracy >= white-box PGD.
    3. At the largest sweep budget, accuracy <= chance + ``chance_margin``.
    4. Accuracy is non-increasing along the budget sweep (``monotone_tol`` slack).
    5. Random sampling in the eps-ball fools no more samples than FGSM does.
    """
    if sibling is None:
        raise ValueError("checklist item (2) needs a separately trained sibling model")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    ev: dict = {}
    v: dict[str, bool] = {}
    fcfg = AttackConfig("fgsm", base.epsilon, seed=derive_seed(seed, 221))
    pcfg = AttackConfig("pgd", base.epsilon, base.alpha, base.steps, seed=derive_seed(seed, 222))
    fadv = run_attack(model, x, y, fcfg)
    padv = run_attack(model, x, y, pcfg)
    f_acc = model.accuracy(fadv.adversarials, y, seed=derive_seed(seed, 223))
    p_acc = model.accuracy(padv.adversarials, y, seed=derive_seed(seed, 223))
    ev["fgsm_accuracy"], ev["pgd_accuracy"] = f_acc, p_acc
    v[CHECKLIST_ITEMS[0]] = p_acc <= f_acc

    bb = blackbox_transfer(sibling, model, x, y, pcfg, eval_seed=derive_seed(seed, 223))
    ev["blackbox_pgd_accuracy"] = bb.accuracy
    v[CHECKLIST_ITEMS[1]] = bb.accuracy >= p_acc

    pts = sweep_accuracy(model, x, y, (0,) + tuple(sweep_etas), seed=derive_seed(seed, 224))
    accs = [p.accuracy for p in pts]
    ev["sweep_eta"] = [p.eta for p in pts]
    ev["sweep_accuracy"] = accs
    chance = 1.0 / model.num_classes
    v[CHECKLIST_ITEMS[2]] = accs[-1] <= chance + chance_margin
    v[CHECKLIST_ITEMS[3]] = all(b <= a + monotone_tol for a, b in zip(accs, accs[1:])) and accs[-1] < accs[0]

    sub = slice(0, min(random_subsample, len(x)))
    rnd = random_sampling_attack(model, x[sub], y[sub], base.epsilon, n_random, derive_seed(seed, 225),
                                 eval_seed=eval_seed_of(fcfg), sample_ids=np.arange(len(x))[sub])
    ev["random_sampling_success"] = float(rnd.mean())
    ev["fgsm_success_subsample"] = float(fadv.success[sub].mean())
    v[CHECKLIST_ITEMS[4]] = rnd.mean() <= fadv.success[sub].mean()
    return ChecklistResult(v, ev)
