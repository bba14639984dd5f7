"""Acceptance suite: one test per criterion, each recording a PASS/FAIL verdict.

Run ``pytest tests/test_acceptance.py -v`` and read the "acceptance criteria"
section at the end of the output.
"""

import itertools
import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from isaiv.causal_linear import ScmConfig, WeakInstrumentError, estimate_iv, estimate_ols, ols_bias_plim, simulate_scm
from isaiv.cli import main
from isaiv.corpus import Example, SynthConfig, build_vocab, encode_example, generate_confounded
from isaiv.ivtrain import (
    AdamState,
    Resources,
    TrainConfig,
    _AugmentedSet,
    adam_step,
    estimate_alpha_from_encodings,
    iv_loss,
    step_gradients,
    train,
)
from isaiv.metrics import LABELS, confusion, macro_f1
from isaiv.model import ModelDims, finite_diff_grad, init_params, max_relative_error, pooling_matrix
from isaiv.perturb import (
    ALL_KINDS,
    InstrumentKind,
    PerturbConfig,
    SimilarityIndex,
    synthetic_embeddings,
    synthetic_lexicon,
)

# --------------------------------------------------------------------------
# The confounded-generalization task shared by criteria 7, 8 and 9
# --------------------------------------------------------------------------

SEEDS = range(5)
BETAS = (0.0, 0.1, 0.3, 0.6, 1.0, 2.0)
TASK_HP = dict(aug_count=4, lr=0.003, epochs=5, batch_size=32, embed_dim=16, hidden_dim=16)
# realized mean margin (beta=0.3 minus beta=0) when this suite was frozen; regression fixture
REALIZED_MARGIN = 0.10370


def task_data(seed):
    split = generate_confounded(SynthConfig(scenario="dynamic_neutral", rho_train=0.9, rho_test=0.1,
                                            n_train=4000, n_test=2000, seed=seed))
    res = Resources(
        PerturbConfig(seed=seed),
        synthetic_lexicon(split.token_groups, seed=seed),
        SimilarityIndex.from_vectors(synthetic_embeddings(split.token_groups, seed=seed)),
    )
    return split, res


class TaskRuns:
    def __init__(self):
        self.acc = {}
        self.data = {}
        self.seconds = {}

    def get(self, key, seed):
        """key is a beta value or the string "aug_as_data"; returns anti-correlated test accuracy."""
        if (key, seed) not in self.acc:
            t0 = time.perf_counter()
            if seed not in self.data:
                self.data[seed] = task_data(seed)
            split, res = self.data[seed]
            if key == "aug_as_data":
                cfg = TrainConfig(beta=0.0, aug_as_data=True, seed=seed, **TASK_HP)
            else:
                cfg = TrainConfig(beta=key, seed=seed, **TASK_HP)
            _, report, _ = train(cfg, split.train, split.test, res)
            self.acc[key, seed] = report.metrics.ise_accuracy
            self.seconds[key, seed] = time.perf_counter() - t0
        return self.acc[key, seed]

    def mean(self, key):
        return float(np.mean([self.get(key, s) for s in SEEDS]))


@pytest.fixture(scope="module")
def runs():
    return TaskRuns()


# --------------------------------------------------------------------------
# 1-6: estimators, alpha, L_IV, gradients, beta = 0
# --------------------------------------------------------------------------


def test_c01_linear_iv_recovery(verdict):
    cfg = ScmConfig(omega=3, w_cy=5, w_cx=1, alpha_zx=1, noise_sd_x=1, noise_sd_y=1, n=50000, seed=7)
    t0 = time.perf_counter()
    s = simulate_scm(cfg)
    iv = estimate_iv(s.z, s.x, s.y).omega_hat
    ols = estimate_ols(s.x, s.y).omega_hat
    plim = ols_bias_plim(cfg)
    elapsed = time.perf_counter() - t0
    ok = abs(iv - 3) < 0.05 and abs((ols - 3) - plim) < 0.1 and abs(plim - 5 / 3) < 1e-12 and elapsed < 1.0
    verdict(1, "linear IV recovery", ok,
            f"IV={iv:.4f} OLS-3={ols - 3:.4f} plim={plim:.4f} time={elapsed:.3f}s")


def test_c02_weak_instrument(verdict):
    try:
        value = estimate_iv(np.full(100, 2.0), np.arange(100.0), np.arange(100.0) * 3)
        ok, detail = False, f"returned {value}"
    except WeakInstrumentError as exc:
        ok, detail = True, f"raised {type(exc).__name__}"
    verdict(2, "weak-instrument detection", ok, detail)


def test_c03_alpha(verdict):
    rng = np.random.default_rng(0)
    enc = rng.normal(size=(50, 8))
    identity = estimate_alpha_from_encodings(enc, enc, np.arange(50), [InstrumentKind.SWAP] * 50)[InstrumentKind.SWAP]
    orig = rng.normal(size=(50, 8))
    aug = 0.8 * orig + 0.5 * rng.normal(size=(50, 8))
    closed = estimate_alpha_from_encodings(orig, aug, np.arange(50), [InstrumentKind.SWAP] * 50)[InstrumentKind.SWAP]
    grid = np.round(np.arange(-50000, 50001) * 1e-4, 4)
    s_oo, s_ao, s_aa = np.sum(orig * orig), np.sum(aug * orig), np.sum(aug * aug)
    objective = s_aa - 2 * grid * s_ao + grid ** 2 * s_oo
    best = grid[int(np.argmin(objective))]
    ok = abs(identity - 1) < 1e-9 and abs(closed - best) <= 1e-4
    verdict(3, "stage-1 alpha", ok, f"identity |a-1|={abs(identity - 1):.1e}, closed={closed:.6f} grid={best:.4f}")


def test_c04_iv_algebra(verdict):
    rng = np.random.default_rng(1)
    alphas = dict(zip(ALL_KINDS, rng.uniform(0.3, 1.8, size=4)))
    v, u = rng.normal(size=3), rng.normal(size=3)
    proportional = iv_loss(alphas, {k: a * v for k, a in alphas.items()})
    leak = iv_loss(alphas, {k: a * v + u for k, a in alphas.items()})
    expected = sum(abs(alphas[i] - alphas[j]) for i, j in itertools.combinations(ALL_KINDS, 2)) * np.linalg.norm(u)
    ok = proportional < 1e-12 and abs(leak - expected) < 1e-10
    verdict(4, "L_IV algebra", ok, f"(a) {proportional:.1e}  (b) |diff|={abs(leak - expected):.1e}")


def test_c05_gradient_fidelity(verdict):
    exs = [
        Example("a", tuple(f"w{i}" for i in range(10)), "positive"),
        Example("b", tuple(f"w{i}" for i in range(6, 16)), "neutral"),
    ]
    vocab = build_vocab(exs)
    groups = {"words": [f"w{i}" for i in range(16)]}
    res = Resources(PerturbConfig(seed=3), synthetic_lexicon(groups, seed=3),
                    SimilarityIndex.from_vectors(synthetic_embeddings(groups, seed=3)))
    aug = _AugmentedSet(exs, vocab, TrainConfig(beta=0.4, aug_count=4), res, 3)
    p0 = init_params(ModelDims(len(vocab), 5, 4), 9)
    params = p0.replace(**{n: a * 8 for n, a in p0.items()})
    pool = pooling_matrix([encode_example(vocab, ex) for ex in exs], len(vocab))
    labels = np.array([ex.label_index for ex in exs])
    alpha = np.array([0.95, 1.1, 0.85, 1.02])
    apool = aug.pool[aug.rows(np.arange(2))]

    def grads(beta):
        return step_gradients(params, pool, labels, beta, alpha, aug, apool)[2]

    def value(part, beta=0.4):
        def f(q):
            ce, iv, _ = step_gradients(q, pool, labels, 1.0 if part == "iv" else beta, alpha, aug, apool)
            return {"ce": ce, "iv": iv, "all": ce + beta * iv}[part]
        return f

    analytic = {"ce": grads(0.0), "iv": grads(1.0) + grads(0.0).scaled(-1), "all": grads(0.4)}
    errors = {k: max_relative_error(g, finite_diff_grad(value(k), params, 1e-5)) for k, g in analytic.items()}
    ok = all(e < 1e-4 for e in errors.values())
    verdict(5, "gradient fidelity", ok, " ".join(f"{k}={e:.1e}" for k, e in errors.items()))


def test_c06_beta_zero_degeneration(verdict):
    split = generate_confounded(SynthConfig(scenario="dynamic_neutral", n_train=200, n_test=50, n_causal_tokens=20, seed=2))
    cfg = TrainConfig(beta=0.0, epochs=3, lr=0.01, batch_size=16, embed_dim=8, hidden_dim=8, seed=4)
    res = Resources(PerturbConfig(seed=4), synthetic_lexicon(split.token_groups), None)
    p_iv, report, vocab = train(cfg, split.train, None, res)
    # plain CE loop with no augmentation machinery
    p = init_params(ModelDims(len(vocab), 8, 8), 4)
    state = AdamState.zeros_like(p)
    pool = pooling_matrix([encode_example(vocab, ex) for ex in split.train], len(vocab))
    labels = np.array([ex.label_index for ex in split.train])
    order = np.random.default_rng([4, 1])
    ce_hist = []
    for _ in range(3):
        perm = order.permutation(len(labels))
        ces = []
        for s in range(0, len(labels), 16):
            idx = perm[s:s + 16]
            ce, _, g = step_gradients(p, pool[idx], labels[idx], 0.0)
            p, state = adam_step(p, g, state, cfg.lr, cfg.decay_map())
            ces.append(ce)
        ce_hist.append(sum(ces) / len(ces))
    same = all(a.tobytes() == b.tobytes() for (_, a), (_, b) in zip(p_iv.items(), p.items()))
    ok = same and [e.ce for e in report.epochs] == ce_hist
    verdict(6, "beta=0 degeneration", ok, "parameters and CE trajectory bit-identical" if ok else "trajectories differ")


# --------------------------------------------------------------------------
# 7-9: confounded generalization on the synthetic dynamic-neutral task
# --------------------------------------------------------------------------


def test_c07_confounded_generalization(verdict, runs):
    t0 = time.perf_counter()
    base = runs.mean(0.0)
    isaiv = runs.mean(0.3)
    elapsed = time.perf_counter() - t0
    margin = isaiv - base
    ok = margin >= 0.05 and elapsed < 300
    verdict(7, "confounded generalization", ok,
            f"anti-correlated acc beta=0 {base:.4f}, beta=0.3 {isaiv:.4f}, margin {100 * margin:+.2f} pts, {elapsed:.0f}s")


def test_c07_regression_fixture(runs):
    margin = runs.mean(0.3) - runs.mean(0.0)
    assert abs(margin - REALIZED_MARGIN) < 0.01


def test_c08_augmentation_as_data(verdict, runs):
    isaiv = runs.mean(0.3)
    as_data = runs.mean("aug_as_data")
    ok = as_data < isaiv
    verdict(8, "augmentation-as-data control", ok, f"CE+augmented rows {as_data:.4f} vs ISAIV {isaiv:.4f}")


def test_c09_beta_sweep_shape(verdict, runs):
    means = {b: runs.mean(b) for b in BETAS}
    best = max(means, key=means.get)
    ok = best not in (BETAS[0], BETAS[-1])
    verdict(9, "beta-sweep shape", ok, "  ".join(f"{b:g}:{m:.3f}" for b, m in means.items()) + f"  best={best:g}")


# --------------------------------------------------------------------------
# 10-11: metrics and CLI determinism
# --------------------------------------------------------------------------


def test_c10_metrics(verdict):
    degenerate = macro_f1(confusion(["positive", "neutral", "negative"], ["positive"] * 3))
    rng = np.random.default_rng(10)
    exact = True
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        g = [LABELS[i] for i in rng.integers(3, size=n)]
        p = [LABELS[i] for i in rng.integers(3, size=n)]
        cm = confusion(g, p)
        exact &= cm.accuracy() == sum(a == b for a, b in zip(g, p)) / n
        exact &= cm.accuracy() == np.trace(cm.counts) / cm.total
    ok = abs(degenerate - 1 / 6) < 1e-12 and exact
    verdict(10, "metrics", ok, f"degenerate macro-F1={degenerate!r}, 1000 accuracy fixtures exact={bool(exact)}")


def _snapshot(paths):
    out = {}
    for p in paths:
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
        for f in files:
            if f.name != "manifest.json" and not f.name.endswith(".manifest.json"):
                out[str(f)] = f.read_bytes()
    return out


def test_c11_cli_determinism(verdict, tmp_path, monkeypatch, capfd):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("ISAIV_SEED", "13")
    small = ["--lr", "0.01", "--epochs", "2", "--embed-dim", "8", "--hidden-dim", "8"]
    commands = [
        (["iv-demo", "--omega", "3", "--wcy", "5", "--wcx", "1", "--n", "20000"], "iv-demo.manifest.json", []),
        (["synth-gen", "--scenario", "dynamic_neutral", "--n-train", "300", "--n-test", "100", "--n-causal", "30",
          "--out", "data"], "data/manifest.json", ["data"]),
        (["perturb", "--input", "data/train.jsonl", "--count", "8", "--lexicon", "data/lexicon.tsv",
          "--embeddings", "data/embeddings.txt"], "perturb.manifest.json", []),
        (["train", "--data", "data", "--out", "run", "--beta", "0.4", *small], "run/manifest.json", ["run"]),
        (["eval", "--checkpoint", "run/model.json", "--data", "data/test.jsonl"], "eval.manifest.json", []),
        (["sweep", "--data", "data", "--out", "sw", "--axis", "beta", "--values", "0,0.4", *small], "sw/manifest.json", ["sw"]),
    ]
    mismatched = []
    for argv, manifest, outputs in commands:
        assert main(argv) == 0, argv
        first_out = capfd.readouterr().out
        first_files = _snapshot(outputs)
        recorded = json.loads(Path(manifest).read_text())["argv"]
        for o in outputs:
            shutil.move(o, o + ".first")
        monkeypatch.setenv("ISAIV_SEED", "99")  # the manifest must pin everything
        code = main(recorded)
        monkeypatch.setenv("ISAIV_SEED", "13")
        second_out = capfd.readouterr().out
        second_files = _snapshot(outputs)
        for o in outputs:
            shutil.rmtree(o)
            shutil.move(o + ".first", o)
        if code != 0 or first_out != second_out or first_files != second_files or not first_files and outputs:
            mismatched.append(argv[0])
    ok = not mismatched
    verdict(11, "CLI determinism", ok, f"{len(commands)} commands replayed from manifests" + (f"; mismatched {mismatched}" if mismatched else ""))
