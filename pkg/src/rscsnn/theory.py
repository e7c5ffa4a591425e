"""Monte-Carlo checks of how Poisson and Gaussian-smoothing input noise
propagate through a linear layer, and the coding-equivalence study.

For Bernoulli coding with probabilities ``p`` the output ``Y = W X`` has
covariance ``W diag(p (1 - p)) W^T``; with ``p = x + eps`` this expands to
``W diag(x(1-x) + eps(1-2x) - eps^2) W^T``. Gaussian smoothing yields
``W diag(sigma^2) W^T`` whatever the (perturbed) centre.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .coding import CodingConfig, derive_seed, encode

REGIMES = ("poisson_clean", "poisson_attacked", "rsc_clean", "rsc_attacked")


@dataclass
class CovariancePrediction:
    mean: np.ndarray | None
    cov: np.ndarray
    regime: str


@dataclass
class EmpiricalMoments:
    mean: np.ndarray
    cov: np.ndarray
    mean_se: np.ndarray
    cov_se: np.ndarray
    n: int


def _as_matrix(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError(f"W must be a matrix, got shape {W.shape}")
    return W


def predict_poisson_cov(x, eps=None, W=None) -> CovariancePrediction:
    """Predicted mean and covariance of ``W X`` for Bernoulli(x + eps) inputs.

    ``eps=None`` gives the clean regime.
    """
    x = np.asarray(x, dtype=np.float64)
    W = np.eye(x.size) if W is None else _as_matrix(W)
    if np.any(x < 0) or np.any(x > 1):
        raise ValueError("x must lie in [0, 1]")
    if eps is None:
        var = x * (1.0 - x)
        return CovariancePrediction(W @ x, (W * var) @ W.T, "poisson_clean")
    eps = np.asarray(eps, dtype=np.float64)
    p = x + eps
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("x + eps leaves [0, 1]; Bernoulli probabilities would be invalid")
    var = x * (1.0 - x) + eps * (1.0 - 2.0 * x) - eps ** 2
    return CovariancePrediction(W @ p, (W * var) @ W.T, "poisson_attacked")


def predict_rsc_cov(sigma2, W, x=None, eps=None) -> CovariancePrediction:
    """Predicted covariance of ``W (x + eps + noise)``, noise ~ N(0, diag(sigma2)).

    The covariance does not depend on ``x`` or ``eps``; they only set the mean.
    """
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    W = _as_matrix(W)
    if np.any(sigma2 < 0):
        raise ValueError("variances must be nonnegative")
    sigma2 = np.broadcast_to(sigma2, (W.shape[1],))
    cov = (W * sigma2) @ W.T
    mean = None
    if x is not None:
        centre = np.asarray(x, dtype=np.float64) + (0.0 if eps is None else np.asarray(eps))
        mean = W @ centre
    return CovariancePrediction(mean, cov, "rsc_clean" if eps is None else "rsc_attacked")


def empirical_cov(coder: str, x, eps, W, n_samples: int = 1_000_000, seed: int = 0,
                  sigma2=None, n_batches: int = 20) -> EmpiricalMoments:
    """Sample mean and unbiased covariance of ``W X`` with standard errors.

    ``coder`` is ``"poisson"`` (Bernoulli(x + eps)) or ``"rsc_unclamped"``
    (x + eps + Gaussian noise, no clamp). Samples are split into ``n_batches``
    equal sub-samples; standard errors are the spread of the sub-sample
    estimates over ``sqrt(n_batches)``. The pooled estimate is built from
    per-batch sums, so it does not depend on batch order.
    """
    if n_samples < 1000:
        raise ValueError("n_samples must be >= 1000")
    if coder not in ("poisson", "rsc_unclamped"):
        raise ValueError(f"unknown coder {coder!r}")
    x = np.asarray(x, dtype=np.float64)
    W = _as_matrix(W)
    p = x + (0.0 if eps is None else np.asarray(eps, dtype=np.float64))
    if coder == "poisson":
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("x + eps leaves [0, 1]")
    else:
        if sigma2 is None:
            raise ValueError("rsc_unclamped needs sigma2")
        sigma = np.sqrt(np.broadcast_to(np.asarray(sigma2, dtype=np.float64), x.shape))
    shift = W @ p
    m = n_samples // n_batches
    k = W.shape[0]
    sums = np.zeros((n_batches, k))
    outer = np.zeros((n_batches, k, k))
    for b in range(n_batches):
        rng = np.random.default_rng(derive_seed(seed, b))
        if coder == "poisson":
            X = (rng.random((m, x.size)) < p).astype(np.float64)
        else:
            X = p + rng.standard_normal((m, x.size)) * sigma
        Y = X @ W.T - shift
        sums[b] = Y.sum(axis=0)
        outer[b] = Y.T @ Y
    n = m * n_batches
    mean_c = sums.sum(axis=0) / n
    cov = (outer.sum(axis=0) - n * np.outer(mean_c, mean_c)) / (n - 1)
    bmeans = sums / m
    bcov = (outer - m * np.einsum("bi,bj->bij", bmeans, bmeans)) / (m - 1)
    mean_se = bmeans.std(axis=0, ddof=1) / np.sqrt(n_batches)
    cov_se = bcov.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return EmpiricalMoments(mean_c + shift, cov, mean_se, cov_se, n)


# -- verification suite --------------------------------------------------------

@dataclass
class CheckRow:
    check: str
    trial: int
    regime: str
    max_z: float
    limit: float
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    rows: list[CheckRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "trial", "regime", "max_z", "limit", "passed", "detail"])
        for r in self.rows:
            w.writerow([r.check, r.trial, r.regime, f"{r.max_z:.6f}", f"{r.limit:.1f}", int(r.passed), r.detail])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = []
        for check in dict.fromkeys(r.check for r in self.rows):
            rows = [r for r in self.rows if r.check == check]
            ok = sum(r.passed for r in rows)
            worst = max(rows, key=lambda r: r.max_z if r.passed else float("inf"))
            lines.append(f"{check}: {ok}/{len(rows)} passed (worst z={worst.max_z:.3f}, limit {worst.limit})")
        lines.append("OVERALL: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"


def random_triple(rng: np.random.Generator, d_max: int = 8, lo: float = 0.05, hi: float = 0.95):
    """Random (x, eps, W) with x and x + eps inside [lo, hi] and W ~ U(-1, 1)."""
    d = int(rng.integers(2, d_max + 1))
    k = int(rng.integers(1, d_max + 1))
    x = rng.uniform(lo, hi, d)
    eps = rng.uniform(-0.3, 0.3, d)
    eps = np.clip(x + eps, lo, hi) - x
    W = rng.uniform(-1.0, 1.0, (k, d))
    return x, eps, W


def _z(emp_value, se, predicted):
    return np.abs(emp_value - predicted) / np.maximum(se, 1e-300)


def check_poisson_theorem(trials: int = 20, n_samples: int = 1_000_000, seed: int = 0,
                          z_limit: float = 5.0) -> list[CheckRow]:
    """Empirical vs predicted mean and covariance, clean and attacked."""
    rng = np.random.default_rng(derive_seed(seed, 31))
    rows = []
    for t in range(trials):
        x, eps, W = random_triple(rng)
        for regime, e in (("poisson_clean", None), ("poisson_attacked", eps)):
            pred = predict_poisson_cov(x, e, W)
            emp = empirical_cov("poisson", x, e, W, n_samples, derive_seed(seed, 32, t, e is not None))
            zc = float(_z(emp.cov, emp.cov_se, pred.cov).max())
            zm = float(_z(emp.mean, emp.mean_se, pred.mean).max())
            rows.append(CheckRow("poisson_cov", t, regime, zc, z_limit, zc <= z_limit, f"d={x.size},k={W.shape[0]}"))
            rows.append(CheckRow("poisson_mean", t, regime, zm, z_limit, zm <= z_limit))
    return rows


def check_rsc_invariance(trials: int = 20, n_samples: int = 1_000_000, seed: int = 0,
                         z_limit: float = 5.0, sigma2: float = 0.04) -> list[CheckRow]:
    """RSC covariance matches prediction and is unchanged by the perturbation;
    the Poisson covariance moves by more than ``z_limit`` SE when the predicted
    diagonal shift ``|eps(1-2x) - eps^2|`` is at least 0.05."""
    rng = np.random.default_rng(derive_seed(seed, 41))
    rows = []
    for t in range(trials):
        x, eps, W = random_triple(rng)
        pred = predict_rsc_cov(sigma2, W)
        clean = empirical_cov("rsc_unclamped", x, None, W, n_samples, derive_seed(seed, 42, t, 0), sigma2)
        att = empirical_cov("rsc_unclamped", x, eps, W, n_samples, derive_seed(seed, 42, t, 1), sigma2)
        for regime, emp in (("rsc_clean", clean), ("rsc_attacked", att)):
            z = float(_z(emp.cov, emp.cov_se, pred.cov).max())
            rows.append(CheckRow("rsc_cov", t, regime, z, z_limit, z <= z_limit))
        diff_se = np.sqrt(clean.cov_se ** 2 + att.cov_se ** 2)
        zi = float((np.abs(att.cov - clean.cov) / diff_se).max())
        rows.append(CheckRow("rsc_invariance", t, "rsc_attacked-vs-clean", zi, z_limit, zi < z_limit))

        # Poisson contrast: one input coordinate with a large predicted shift, W = I
        shift = eps * (1 - 2 * x) - eps ** 2
        j = int(np.argmax(np.abs(shift)))
        if abs(shift[j]) >= 0.05:
            pc = empirical_cov("poisson", x[j:j + 1], None, np.eye(1), n_samples, derive_seed(seed, 43, t, 0))
            pa = empirical_cov("poisson", x[j:j + 1], eps[j:j + 1], np.eye(1), n_samples,
                               derive_seed(seed, 43, t, 1))
            zp = float(abs(pa.cov[0, 0] - pc.cov[0, 0]) / np.sqrt(pc.cov_se[0, 0] ** 2 + pa.cov_se[0, 0] ** 2))
            rows.append(CheckRow("poisson_contrast", t, "poisson_attacked-vs-clean", zp, z_limit, zp > z_limit,
                                 f"shift={shift[j]:.4f}"))
    return rows


def boundary_distortion(x_values, sigma2: float, n_samples: int = 200_000, seed: int = 0) -> list[dict]:
    """Variance of clamp(x + noise) vs the unclamped sigma2, per input level."""
    out = []
    for i, xv in enumerate(np.asarray(x_values, dtype=np.float64)):
        rng = np.random.default_rng(derive_seed(seed, 51, i))
        s = np.clip(xv + rng.standard_normal(n_samples) * np.sqrt(sigma2), 0.0, 1.0)
        out.append({"x": float(xv), "sigma2": sigma2, "clamped_mean": float(s.mean()),
                    "clamped_var": float(s.var(ddof=1)), "var_ratio": float(s.var(ddof=1) / sigma2)})
    return out


def verify_theorems(n_samples: int = 1_000_000, seed: int = 0, trials: int = 20) -> VerificationReport:
    report = VerificationReport()
    report.rows += check_poisson_theorem(trials, n_samples, seed)
    report.rows += check_rsc_invariance(trials, n_samples, seed)
    return report


# -- coding equivalence ----------------------------------------------------------

@dataclass
class EquivalenceReport:
    scheme_a: str
    scheme_b: str
    T_a: int
    T_b: int
    similarities: np.ndarray
    skipped: list[int] = field(default_factory=list)

    @property
    def avg_cs(self) -> float:
        return float(self.similarities.mean()) if self.similarities.size else float("nan")


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a, b = a.ravel(), b.ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroDivisionError("zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def equivalence_study(x, T_poisson: int = 16, T_rs: int = 8, sigma2: float = 0.01, seed: int = 0,
                      scheme_a: str = "rsc1", scheme_b: str = "poisson") -> EquivalenceReport:
    """Cosine similarity between time-averaged, flattened codings of each input.

    ``T_poisson`` applies to the Poisson scheme; every other scheme runs for
    ``T_rs`` steps. Inputs whose averaged coding has zero norm are skipped.
    """
    x = np.asarray(x, dtype=np.float64)

    def cfg(scheme, tag):
        T = T_poisson if scheme == "poisson" else T_rs
        return CodingConfig(scheme, T, sigma2 if scheme.startswith("rsc") else 0.0, derive_seed(seed, tag))

    ca, cb = cfg(scheme_a, 61), cfg(scheme_b, 62)
    sims, skipped = [], []
    ids = np.arange(len(x))
    fa = encode(x, ca, sample_ids=ids).frames.mean(axis=0)
    fb = encode(x, cb, sample_ids=ids).frames.mean(axis=0)
    for i in range(len(x)):
        try:
            sims.append(cosine_similarity(fa[i], fb[i]))
        except ZeroDivisionError:
            skipped.append(i)
    return EquivalenceReport(scheme_a, scheme_b, ca.T, cb.T, np.array(sims), skipped)
