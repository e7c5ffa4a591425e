"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line in ``RESULTS``; ``conftest.py``
prints them in the terminal summary. Run alone with
``python3 -m pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest

from oracles import central_difference, lif_net_linearized_loss, lif_net_rollout, rel_error
from rscsnn import Classifier, CodingConfig, Network, toy_spec
from rscsnn import tensor as tn
from rscsnn.attacks import AttackConfig, fgsm, pgd, run_attack
from rscsnn.datasets import make_dataset
from rscsnn.io import (Checkpoint, decode_checkpoint, encode_checkpoint, load_dataset, save_checkpoint,
                       save_dataset)
from rscsnn.metrics import evaluate, obfuscation_checklist, qte_from_accuracies
from rscsnn.snn import LayerSpec, LifParams, NetworkSpec, snn_forward
from rscsnn.tensor import Tensor
from rscsnn.theory import check_poisson_theorem, check_rsc_invariance, equivalence_study
from rscsnn.training import TrainConfig, loss_ersct, train, train_teacher_ann

RESULTS: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)


# -- 1. QTE table regression ------------------------------------------------------

# (block, method, clean, fgsm, pgd, reference F-QTE, reference P-QTE), accuracies in percent
TABLE = [
    ("CIFAR-10", "ANN", 90.95, 10.89, 0.12, 4.07, 3.64),
    ("CIFAR-10", "Direct", 90.69, 6.19, 0.03, 3.88, 3.63),
    ("CIFAR-10", "Poisson", 83.18, 31.20, 22.16, 4.58, 4.21),
    ("CIFAR-10", "RSC-0.1", 80.29, 51.29, 37.28, 5.26, 4.70),
    ("CIFAR-10", "RSC-0.5", 78.67, 66.61, 58.94, 5.81, 5.50),
    ("CIFAR-100", "ANN", 72.86, 4.56, 0.13, 3.10, 2.92),
    ("CIFAR-100", "Direct", 72.45, 4.67, 0.22, 3.08, 2.91),
    ("CIFAR-100", "Poisson", 58.49, 19.46, 15.56, 3.12, 2.96),
    ("CIFAR-100", "RSC-0.1", 57.05, 32.48, 24.35, 3.58, 3.22),
    ("CIFAR-100", "RSC-0.2", 55.42, 37.83, 29.69, 3.73, 3.40),
    ("CIFAR-100", "RSC-0.5", 51.30, 40.81, 33.96, 3.68, 3.41),
]


def test_criterion_01_qte_table():
    t = time.time()
    bad = []
    for block, method, clean, f, p, fq, pq in TABLE:
        for name, att, ref in (("F-QTE", f, fq), ("P-QTE", p, pq)):
            got = qte_from_accuracies(clean / 100, att / 100, 8.0)
            if abs(got - ref) > 0.01:
                bad.append(f"{block} {method} {name} {got:.4f} vs {ref}")
    ok = not bad
    record(1, ok, f"{2 * len(TABLE) - len(bad)}/{2 * len(TABLE)} QTE values within 0.01"
           + (f"; mismatches: {', '.join(bad)}" if bad else "") + f" ({time.time() - t:.3f}s)")
    assert ok, bad


# -- 2, 3. Monte-Carlo covariance theorems ------------------------------------------

def test_criterion_02_poisson_covariance():
    t = time.time()
    rows = check_poisson_theorem(trials=20, n_samples=1_000_000, seed=0)
    cov = [r for r in rows if r.check == "poisson_cov"]
    fails = [r for r in cov if not r.passed]
    worst = max(r.max_z for r in cov)
    dt = time.time() - t
    ok = not fails and len(cov) == 40 and dt < 120
    record(2, ok, f"{len(cov) - len(fails)}/40 regimes within 5 SE (worst z={worst:.2f}, {dt:.1f}s)")
    assert ok


def test_criterion_03_rsc_invariance():
    t = time.time()
    rows = check_rsc_invariance(trials=20, n_samples=1_000_000, seed=0)
    inv = [r for r in rows if r.check == "rsc_invariance"]
    cov = [r for r in rows if r.check == "rsc_cov"]
    con = [r for r in rows if r.check == "poisson_contrast"]
    dt = time.time() - t
    ok = all(r.passed for r in inv) and bool(con) and all(r.passed for r in con) and dt < 120
    record(3, ok, f"RSC cov vs prediction {sum(r.passed for r in cov)}/{len(cov)}; RSC invariance {sum(r.passed for r in inv)}/{len(inv)} (<5 SE, worst "
           f"{max(r.max_z for r in inv):.2f}); Poisson shift {sum(r.passed for r in con)}/{len(con)} (>5 SE, "
           f"min {min(r.max_z for r in con):.1f}) ({dt:.1f}s)")
    assert ok


# -- 4. coding equivalence ----------------------------------------------------------

def test_criterion_04_equivalence():
    t = time.time()
    x, _ = make_dataset("stripes", 500, seed=0)
    rep = equivalence_study(x, T_poisson=16, T_rs=8, sigma2=0.01, seed=0, scheme_a="rsc1", scheme_b="poisson")
    dt = time.time() - t
    ok = rep.avg_cs >= 0.95 and dt < 60
    record(4, ok, f"Avg CS(RSC, Poisson) = {rep.avg_cs:.4f} on 500 stripes samples ({dt:.1f}s)")
    assert ok


# -- 5. gradient fidelity ----------------------------------------------------------

def _lif_instance(rng):
    d, k, c, n = (int(v) for v in rng.integers(2, 6, 4))
    tau = float(rng.uniform(0.5, 1.0))
    W = rng.normal(0, 0.8, (k, d))
    b = rng.normal(0.3, 0.3, k)
    V = rng.normal(size=(c, k))
    cb = rng.normal(size=c)
    frames = rng.uniform(0, 1, (2, n, d))
    y = rng.integers(0, c, n)
    spec = NetworkSpec((d,), (LayerSpec("fc", out=k), LayerSpec("lif"), LayerSpec("fc", out=c)), LifParams(tau=tau))
    net = Network(spec)
    for name, v in (("0.weight", W), ("0.bias", b), ("2.weight", V), ("2.bias", cb)):
        net.params[name].data = v.copy()
    steps = [Tensor(f, requires_grad=True) for f in frames]
    net.zero_grad()
    loss = tn.cross_entropy(tn.mean(snn_forward(net, steps), axis=0), y)
    tn.backward(loss)
    us, _ = lif_net_rollout(W, b, V, cb, frames, tau=tau)

    def f_of(which):
        def f(v):
            args = {"W": W, "b": b, "V": V, "c": cb, "frames": frames}
            args[which] = v
            return lif_net_linearized_loss(args["W"], args["b"], args["V"], args["c"], args["frames"], y, us, tau=tau)
        return f

    pairs = [(net.params["0.weight"].grad, central_difference(f_of("W"), W)),
             (net.params["0.bias"].grad, central_difference(f_of("b"), b)),
             (net.params["2.weight"].grad, central_difference(f_of("V"), V)),
             (np.stack([f.grad for f in steps]), central_difference(f_of("frames"), frames))]
    return max(rel_error(a, n_) for a, n_ in pairs)


def _ersct_instance(rng):
    T, n, k = (int(v) for v in rng.integers(2, 6, 3))
    z0 = rng.normal(size=(T, n, k))
    teacher = rng.normal(size=(n, k))
    y = rng.integers(0, k, n)
    lam = float(rng.uniform(0, 1))
    z = Tensor(z0, requires_grad=True)
    tn.backward(loss_ersct(z, teacher, y, lam))
    return rel_error(z.grad, central_difference(lambda v: loss_ersct(Tensor(v), teacher, y, lam).item(), z0))


def _conv_instance(rng):
    n, c, o = (int(v) for v in rng.integers(1, 4, 3))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x0 = rng.normal(size=(n, c, 6, 6))
    w0 = rng.normal(size=(o, c, 3, 3))
    bw, bb = rng.normal(1, 0.1, o), rng.normal(size=o)
    y = rng.integers(0, 2, n)

    def loss_of(x, w, track=False):
        xt, wt = Tensor(x, requires_grad=track), Tensor(w, requires_grad=track)
        h = tn.conv2d(xt, wt, stride=stride, padding=padding)
        if n > 1:
            h = tn.batch_norm(h, Tensor(bw), Tensor(bb), np.zeros(o), np.ones(o), True)
        h = tn.relu(h) if h.shape[-1] % 2 else tn.avg_pool2d(tn.relu(h), 2)
        flat = tn.reshape(h, (n, -1))
        # random readout scaled so the logits stay O(1) and the loss does not saturate
        R = np.random.default_rng(n * 100 + o * 10 + stride).normal(size=(2, flat.shape[1])) / flat.shape[1]
        logits = tn.linear(flat, Tensor(R))
        return xt, wt, tn.cross_entropy(logits, y)

    xt, wt, loss = loss_of(x0, w0, True)
    tn.backward(loss)
    gx = central_difference(lambda v: loss_of(v, w0)[2].item(), x0)
    gw = central_difference(lambda v: loss_of(x0, v)[2].item(), w0)
    return max(rel_error(xt.grad, gx), rel_error(wt.grad, gw))


def test_criterion_05_gradient_fidelity():
    t = time.time()
    rng = np.random.default_rng(2024)
    errs = {"lif_2step": [], "loss_ersct": [], "conv_bn_pool_ce": []}
    for i in range(50):
        kind = ("lif_2step", "loss_ersct", "conv_bn_pool_ce")[i % 3]
        fn = {"lif_2step": _lif_instance, "loss_ersct": _ersct_instance, "conv_bn_pool_ce": _conv_instance}[kind]
        errs[kind].append(fn(rng))
    worst = max(max(v) for v in errs.values())
    dt = time.time() - t
    ok = worst < 1e-3 and dt < 60
    detail = ", ".join(f"{k} n={len(v)} max={max(v):.1e}" for k, v in errs.items())
    record(5, ok, f"50 instances, worst rel err {worst:.1e} < 1e-3 ({detail}; {dt:.1f}s)")
    assert ok


# -- toy-scale trained models (criteria 6 to 10) ----------------------------------------

# 8x8 dark-background blobs with a faint class texture and 10% misleading main patterns
TOY = dict(kind="blobs", contrast=0.15, background=0.1, texture=0.02, flip=0.1, noise=0.02)
SIGMA2_LOW, SIGMA2_HIGH = 0.001, 0.005
SEEDS = (0, 1, 2)
N_TRAIN, N_TEST, EPOCHS = 800, 300, 10


def _toy_data():
    kw = {k: v for k, v in TOY.items() if k != "kind"}
    x, y = make_dataset(TOY["kind"], N_TRAIN, seed=0, **kw)
    xt, yt = make_dataset(TOY["kind"], N_TEST, seed=1, **kw)
    return x, y, xt, yt


def _coders():
    return {"direct": CodingConfig.default("direct"), "poisson": CodingConfig.default("poisson"),
            "rsc_low": CodingConfig.default("rsc1", SIGMA2_LOW), "rsc_high": CodingConfig.default("rsc1", SIGMA2_HIGH)}


@pytest.fixture(scope="module")
def toy():
    t = time.time()
    x, y, xt, yt = _toy_data()
    models = {}
    for name, coding in _coders().items():
        for sd in SEEDS:
            m = Classifier(Network(toy_spec(), seed=sd), coding)
            train(m, x, y, TrainConfig(epochs=EPOCHS, seed=sd))
            models[name, sd] = m
    return {"data": (x, y, xt, yt), "models": models, "train_seconds": time.time() - t}


def test_criterion_06_attack_contracts(toy):
    x, y, xt, yt = toy["data"]
    m = toy["models"]["rsc_high", 0]
    f = fgsm(m, xt, yt, AttackConfig("fgsm", 8 / 255, seed=1))
    p1 = pgd(m, xt, yt, AttackConfig("pgd", 8 / 255, alpha=8 / 255, steps=1, seed=1))
    bit_exact = f.adversarials.tobytes() == p1.adversarials.tobytes()
    feasible = True
    for name in ("direct", "poisson", "rsc_low", "rsc_high"):
        for fam in ("fgsm", "pgd", "eotpgd"):
            adv = run_attack(toy["models"][name, 0], xt[:64], yt[:64], AttackConfig(fam, 8 / 255, eot_samples=2))
            feasible &= bool(np.all(adv.linf() <= 8 / 255 + 1e-12))
            feasible &= bool(adv.adversarials.min() >= 0 and adv.adversarials.max() <= 1)
    d = toy["models"]["direct", 0]
    rep = evaluate(d, xt, yt, [AttackConfig("fgsm"), AttackConfig("pgd")])
    a_clean, a_f, a_p = rep.clean_accuracy, rep.attacks["fgsm@8/255"], rep.attacks["pgd@8/255"]
    order = a_p <= a_f <= a_clean
    ok = bit_exact and feasible and order
    record(6, ok, f"PGD1==FGSM bit-exact={bit_exact}; l-inf/range ok={feasible}; "
           f"direct toy: PGD {a_p:.3f} <= FGSM {a_f:.3f} <= clean {a_clean:.3f}: {order}")
    assert ok


def _robust_table(toy):
    x, y, xt, yt = toy["data"]
    out = {}
    for (name, sd), m in toy["models"].items():
        rep = evaluate(m, xt, yt, [AttackConfig("pgd", seed=3)], seed=5)
        out.setdefault(name, []).append((rep.clean_accuracy, rep.attacks["pgd@8/255"]))
    return {k: (float(np.median([c for c, _ in v])), float(np.median([p for _, p in v]))) for k, v in out.items()}


def test_criterion_07_robustness_trend(toy):
    t = time.time()
    med = _robust_table(toy)
    rob = {k: v[1] for k, v in med.items()}
    clean = {k: v[0] for k, v in med.items()}
    robust_order = rob["rsc_high"] >= rob["rsc_low"] >= rob["poisson"] >= rob["direct"]
    clean_order = clean["rsc_high"] <= clean["rsc_low"]
    dt = time.time() - t + toy["train_seconds"]
    ok = robust_order and clean_order and dt < 15 * 60
    record(7, ok, "median PGD: " + ", ".join(f"{k} {rob[k]:.3f}" for k in ("rsc_high", "rsc_low", "poisson", "direct"))
           + f"; median clean rsc_high {clean['rsc_high']:.3f} <= rsc_low {clean['rsc_low']:.3f}: {clean_order}"
           + f" ({dt:.0f}s incl. training)")
    assert ok


def test_criterion_08_e_rsct(toy):
    x, y, xt, yt = toy["data"]
    teacher = train_teacher_ann(toy_spec(), x, y, TrainConfig(epochs=EPOCHS, seed=0))
    plain, distilled = [], []
    for sd in SEEDS:
        plain.append(toy["models"]["rsc_high", sd].accuracy(xt, yt, seed=7))
        m = Classifier(Network(toy_spec(), seed=sd), _coders()["rsc_high"])
        train(m, x, y, TrainConfig(epochs=EPOCHS, seed=sd, loss_mode="e_rsct"), teacher=teacher)
        distilled.append(m.accuracy(xt, yt, seed=7))
    a, b = float(np.median(distilled)), float(np.median(plain))
    ok = a >= b
    record(8, ok, f"median clean E-RSCT {a:.3f} >= plain RSC {b:.3f} (teacher clean "
           f"{teacher.classifier.accuracy(xt, yt):.3f})")
    assert ok


def test_criterion_09_eot_strength(toy):
    x, y, xt, yt = toy["data"]
    m = toy["models"]["rsc_high", 0]
    rep = evaluate(m, xt, yt, [AttackConfig("pgd", seed=4), AttackConfig("eotpgd", eot_samples=8, seed=4)], seed=6)
    a_p, a_e = rep.attacks["pgd@8/255"], rep.attacks["eotpgd@8/255"]
    ok = a_e <= a_p
    record(9, ok, f"RSC toy: EOT-PGD(8) {a_e:.3f} <= PGD {a_p:.3f}")
    assert ok


def test_criterion_10_checklist(toy):
    x, y, xt, yt = toy["data"]
    m, sib = toy["models"]["rsc_high", 0], toy["models"]["rsc_high", 1]
    res = obfuscation_checklist(m, xt, yt, sib, seed=0)
    ev = res.evidence
    ok = res.all_pass
    record(10, ok, f"{sum(res.verdicts.values())}/5 items pass; sweep at 64/255 = {ev['sweep_accuracy'][-1]:.3f} "
           f"(chance 0.5); FGSM {ev['fgsm_accuracy']:.3f}, PGD {ev['pgd_accuracy']:.3f}, "
           f"black-box {ev['blackbox_pgd_accuracy']:.3f}, random {ev['random_sampling_success']:.3f} vs "
           f"FGSM success {ev['fgsm_success_subsample']:.3f}"
           + ("" if ok else f"; failing: {[k for k, v in res.verdicts.items() if not v]}"))
    assert ok


# -- 11. engineering invariants ---------------------------------------------------------

def test_criterion_11_engineering(tmp_path):
    x, y = make_dataset("stripes", 120, seed=3)
    m = Classifier(Network(toy_spec(batchnorm=True), seed=1), CodingConfig.default("rsc1", 0.05))
    train(m, x, y, TrainConfig(epochs=1, seed=0))
    ck = Checkpoint.from_classifier(m, {"init": 1}, {"epoch": 1})
    save_checkpoint(tmp_path / "m.ckpt", ck)
    raw = (tmp_path / "m.ckpt").read_bytes()
    again = encode_checkpoint(decode_checkpoint(raw))
    m2 = decode_checkpoint(raw).build()
    probe = np.random.default_rng(0).random((16, 1, 8, 8))
    ckpt_ok = again == raw and m2.predict_logits(probe, seed=2).tobytes() == m.predict_logits(probe, seed=2).tobytes()

    def run():
        mm = Classifier(Network(toy_spec(), seed=5), CodingConfig.default("poisson"))
        train(mm, x[:64], y[:64], TrainConfig(epochs=1, seed=9))
        adv = run_attack(mm, x[:32], y[:32], AttackConfig("eotpgd", steps=2, eot_samples=2, seed=1))
        return mm.net.flat_parameters().tobytes() + adv.adversarials.tobytes()

    det_ok = run() == run()
    save_dataset(tmp_path / "d", x, y, 2)
    x2, y2, k = load_dataset(tmp_path / "d")
    data_ok = x2.tobytes() == x.tobytes() and np.array_equal(y2, y) and k == 2
    ok = ckpt_ok and det_ok and data_ok
    record(11, ok, f"checkpoint round-trip bit-exact={ckpt_ok}; deterministic train+attack={det_ok}; "
           f"dataset round-trip={data_ok}")
    assert ok
