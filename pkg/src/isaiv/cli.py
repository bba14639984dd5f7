"""Command-line entry point: ``isaiv <command> [flags]``.

Commands: iv-demo, synth-gen, perturb, train, eval, sweep. Every command
writes a JSON run manifest recording the resolved flags so the run can be
repeated exactly. Exit codes: 0 ok, 2 usage/config, 3 io or malformed
input, 4 numeric failure, 5 incompatible artifact.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .causal_linear import DegenerateTreatmentError, ScmConfig, WeakInstrumentError, estimate_iv, estimate_ols, ols_bias_plim, simulate_scm
from .corpus import CorpusFormatError, SynthConfig, Vocabulary, generate_confounded, load_jsonl
from .ivtrain import (
    Resources,
    TrainConfig,
    TrainingDivergedError,
    config_from_mapping,
    evaluate,
    load_config,
    train,
)
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .perturb import (
    ALL_KINDS,
    InstrumentKind,
    PerturbConfig,
    SimilarityIndex,
    SynonymLexicon,
    augment_corpus,
    save_embeddings,
    synthetic_embeddings,
    synthetic_lexicon,
)

SEED_ENV = "ISAIV_SEED"

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_ARTIFACT = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={raw!r} is not an integer") from None


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _tsv(header: Sequence[str], rows) -> str:
    lines = ["#" + "\t".join(header)]
    lines += ["\t".join(_fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value training config file (flags override it)")
    p.add_argument("--data", help="directory holding train.jsonl, test.jsonl, lexicon.tsv, embeddings.txt")
    p.add_argument("--train", help="training JSONL (overrides --data)")
    p.add_argument("--test", help="held-out JSONL for the final metrics (overrides --data)")
    p.add_argument("--lexicon", help="synonym lexicon TSV (overrides --data)")
    p.add_argument("--embeddings", help="word vectors for insertion (overrides --data)")
    p.add_argument("--seed", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--aug", dest="aug_count", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--kinds", help="comma-separated subset of swap,delete,insert,synonym")
    p.add_argument("--alpha-mode", choices=["closed_form", "learned"])
    p.add_argument("--alpha-objective", choices=["squared", "norm"])
    p.add_argument("--alpha-schedule", choices=["per_epoch", "frozen_after_first"])
    p.add_argument("--dropout", type=float)
    p.add_argument("--aug-as-data", action="store_const", const="true", default=None)
    p.add_argument("--resample-augmentations", action="store_const", const="true", default=None)
    _add_perturb_flags(p)


def _add_perturb_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--p-delete", type=float)
    p.add_argument("--swap-rate", type=float)
    p.add_argument("--insert-rate", type=float)
    p.add_argument("--synonym-max", type=int)
    p.add_argument("--top-k", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isaiv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"isaiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--manifest", help="where to write the run manifest")
        return p

    p = add("iv-demo", "linear SCM: true effect vs IV and OLS estimates")
    p.add_argument("--omega", type=float, required=True)
    p.add_argument("--wcy", type=float, required=True)
    p.add_argument("--wcx", type=float, required=True)
    p.add_argument("--alpha-zx", type=float, default=1.0)
    p.add_argument("--noise-x", type=float, default=1.0)
    p.add_argument("--noise-y", type=float, default=1.0)
    p.add_argument("--n", type=int, default=50000)
    p.add_argument("--seed", type=int)
    p.add_argument("--bernoulli-z", action="store_true")

    p = add("synth-gen", "write a synthetic confounded corpus")
    d = SynthConfig()
    p.add_argument("--out", required=True)
    p.add_argument("--scenario", default=d.scenario, choices=["basic", "inter_aspect", "inter_clause", "dynamic_neutral"])
    p.add_argument("--n-train", type=int, default=d.n_train)
    p.add_argument("--n-test", type=int, default=d.n_test)
    p.add_argument("--rho-train", type=float, default=d.rho_train)
    p.add_argument("--rho-test", type=float, default=d.rho_test)
    p.add_argument("--n-causal", type=int, default=d.n_causal_tokens)
    p.add_argument("--n-confounder", type=int, default=d.n_confounder_tokens)
    p.add_argument("--n-filler", type=int, default=d.n_filler_tokens)
    p.add_argument("--sentence-len", type=int, default=d.sentence_len)
    p.add_argument("--neutral-class", default=d.neutral_class)
    p.add_argument("--neutral-presence", type=float, default=d.neutral_presence)
    p.add_argument("--synonyms", type=int, default=5, help="synonyms per lexicon entry")
    p.add_argument("--vector-dim", type=int, default=16, help="dimension of the written word vectors")
    p.add_argument("--seed", type=int)

    p = add("perturb", "preview augmentations of a JSONL file as TSV")
    p.add_argument("--input", required=True)
    p.add_argument("--kinds", default=",".join(k.value for k in ALL_KINDS))
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--lexicon")
    p.add_argument("--embeddings")
    p.add_argument("--seed", type=int)
    _add_perturb_flags(p)

    p = add("train", "train a classifier with the IV regularizer")
    p.add_argument("--out", required=True)
    _add_train_flags(p)

    p = add("eval", "score a checkpoint on a JSONL file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="JSONL file to evaluate")

    p = add("sweep", "train once per value of beta or aug and tabulate")
    p.add_argument("--out", required=True)
    p.add_argument("--axis", required=True, choices=["beta", "aug"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    _add_train_flags(p)
    return parser


# --------------------------------------------------------------------------
# Shared helpers
# --------------------------------------------------------------------------

_TRAIN_KEYS = {
    "beta": "beta",
    "aug_count": "aug_count",
    "lr": "lr",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "embed_dim": "embed_dim",
    "hidden_dim": "hidden_dim",
    "weight_decay": "weight_decay",
    "kinds": "kinds",
    "alpha_mode": "alpha_mode",
    "alpha_objective": "alpha_objective",
    "alpha_schedule": "alpha_schedule",
    "dropout": "dropout",
    "aug_as_data": "aug_as_data",
    "resample_augmentations": "resample_augmentations",
}


def resolve_train_config(args) -> TrainConfig:
    """defaults < ISAIV_SEED < config file < flags."""
    base = TrainConfig(seed=default_seed())
    if args.config:
        base = load_config(args.config, base)
    flags = {key: str(getattr(args, attr)) for attr, key in _TRAIN_KEYS.items() if getattr(args, attr) is not None}
    if args.seed is not None:
        flags["seed"] = str(args.seed)
    return config_from_mapping(flags, base)


def resolve_perturb_config(args, seed: int) -> PerturbConfig:
    d = PerturbConfig()
    pc = PerturbConfig(
        p_delete=d.p_delete if args.p_delete is None else args.p_delete,
        swap_rate=d.swap_rate if args.swap_rate is None else args.swap_rate,
        insert_rate=d.insert_rate if args.insert_rate is None else args.insert_rate,
        synonym_max=d.synonym_max if args.synonym_max is None else args.synonym_max,
        top_k_neighbors=d.top_k_neighbors if args.top_k is None else args.top_k,
        seed=seed,
    )
    pc.validate()
    return pc


def _data_paths(args) -> dict[str, Optional[str]]:
    base = Path(args.data) if args.data else None
    out = {}
    for name, fname in (("train", "train.jsonl"), ("test", "test.jsonl"), ("lexicon", "lexicon.tsv"), ("embeddings", "embeddings.txt")):
        explicit = getattr(args, name)
        if explicit:
            out[name] = explicit
        elif base is not None and (base / fname).exists():
            out[name] = str(base / fname)
        else:
            out[name] = None
    if out["train"] is None:
        raise UsageError("no training data: pass --train or --data")
    return out


def _load_resources(perturb: PerturbConfig, lexicon: Optional[str], embeddings: Optional[str]) -> Resources:
    lex = SynonymLexicon.load(lexicon) if lexicon else None
    index = SimilarityIndex.load(embeddings) if embeddings else None
    return Resources(perturb, lex, index)


def _train_once(cfg: TrainConfig, perturb: PerturbConfig, paths: dict, out_dir: Path) -> dict:
    """Train, write checkpoint/report/metrics into ``out_dir`` and return the metrics dict (or None)."""
    train_ex = load_jsonl(paths["train"])
    test_ex = load_jsonl(paths["test"]) if paths["test"] else None
    resources = _load_resources(perturb, paths["lexicon"], paths["embeddings"])
    # divergence is detected explicitly and reported as exit 4
    with np.errstate(over="ignore", invalid="ignore"):
        params, report, vocab = train(cfg, train_ex, test_ex, resources)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "model.json", params, cfg.seed, vocab.tokens(), {"train_config": cfg.to_dict()})
    _write_json(out_dir / "report.json", report.to_dict(include_timing=False))
    metrics = report.metrics.to_dict() if report.metrics else None
    if metrics is not None:
        _write_json(out_dir / "metrics.json", metrics)
    return metrics


def _sweep_job(job):
    cfg, perturb, paths, out_dir = job
    return _train_once(cfg, perturb, paths, Path(out_dir))


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_iv_demo(args, run: dict) -> int:
    seed = default_seed() if args.seed is None else args.seed
    cfg = ScmConfig(
        omega=args.omega, w_cy=args.wcy, w_cx=args.wcx, alpha_zx=args.alpha_zx,
        noise_sd_x=args.noise_x, noise_sd_y=args.noise_y, n=args.n, seed=seed, bernoulli_z=args.bernoulli_z,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    run["seed"] = seed
    run["config"] = dataclasses.asdict(cfg)
    s = simulate_scm(cfg)
    iv = estimate_iv(s.z, s.x, s.y).omega_hat
    ols = estimate_ols(s.x, s.y).omega_hat
    sys.stdout.write(_tsv(["omega_true", "omega_iv", "omega_ols", "ols_bias_plim"], [[cfg.omega, iv, ols, ols_bias_plim(cfg)]]))
    return EXIT_OK


def cmd_synth_gen(args, run: dict) -> int:
    seed = default_seed() if args.seed is None else args.seed
    cfg = SynthConfig(
        n_train=args.n_train, n_test=args.n_test, rho_train=args.rho_train, rho_test=args.rho_test,
        n_causal_tokens=args.n_causal, n_confounder_tokens=args.n_confounder, n_filler_tokens=args.n_filler,
        sentence_len=args.sentence_len, scenario=args.scenario, seed=seed,
        neutral_class=args.neutral_class, neutral_presence=args.neutral_presence,
    )
    try:
        cfg.validate()
        if args.synonyms < 1 or args.vector_dim < 1:
            raise ValueError("--synonyms and --vector-dim must be >= 1")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    run["seed"] = seed
    run["config"] = dataclasses.asdict(cfg)
    split = generate_confounded(cfg)
    out = Path(args.out)
    split.save(out)
    synthetic_lexicon(split.token_groups, args.synonyms, seed).save(out / "lexicon.tsv")
    save_embeddings(synthetic_embeddings(split.token_groups, args.vector_dim, seed=seed), out / "embeddings.txt")
    run["outputs"] = [str(out / f) for f in ("train.jsonl", "test.jsonl", "truth.json", "lexicon.tsv", "embeddings.txt")]
    return EXIT_OK


def cmd_perturb(args, run: dict) -> int:
    seed = default_seed() if args.seed is None else args.seed
    try:
        kinds = [InstrumentKind.parse(k) for k in args.kinds.split(",") if k.strip()]
        perturb = resolve_perturb_config(args, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.count < len(kinds) or not kinds:
        raise UsageError(f"--count {args.count} must be >= number of kinds ({len(kinds)})")
    run["seed"] = seed
    run["config"] = {"kinds": [k.value for k in kinds], "count": args.count, **dataclasses.asdict(perturb)}
    run["inputs"] = [p for p in (args.input, args.lexicon, args.embeddings) if p]
    examples = load_jsonl(args.input)
    res = _load_resources(perturb, args.lexicon, args.embeddings)
    augs = augment_corpus(examples, kinds, args.count, perturb, res.lexicon, res.index)
    rows = [[a.origin_id, a.kind.value, a.replica, " ".join(a.tokens)] for ex in examples for a in augs[ex.id]]
    sys.stdout.write(_tsv(["origin_id", "kind", "replica", "text"], rows))
    return EXIT_OK


def _prepare_training(args, run: dict):
    try:
        cfg = resolve_train_config(args)
        perturb = resolve_perturb_config(args, cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    paths = _data_paths(args)
    run["seed"] = cfg.seed
    run["config"] = {"train": cfg.to_dict(), "perturb": dataclasses.asdict(perturb)}
    run["inputs"] = [p for p in paths.values() if p]
    return cfg, perturb, paths


def cmd_train(args, run: dict) -> int:
    cfg, perturb, paths = _prepare_training(args, run)
    out = Path(args.out)
    _train_once(cfg, perturb, paths, out)
    run["outputs"] = [str(out / f) for f in ("model.json", "report.json", "metrics.json") if (out / f).exists()]
    return EXIT_OK


def cmd_eval(args, run: dict) -> int:
    run["inputs"] = [args.checkpoint, args.data]
    params, doc = load_checkpoint(args.checkpoint)
    examples = load_jsonl(args.data)
    report = evaluate(params, Vocabulary(doc["vocab"]), examples)
    sys.stdout.write(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _parse_values(axis: str, raw: str) -> list:
    try:
        vals = [float(v) if axis == "beta" else int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --values {raw!r} for axis {axis}") from None
    if not vals:
        raise UsageError("--values is empty")
    return vals


def cmd_sweep(args, run: dict) -> int:
    cfg, perturb, paths = _prepare_training(args, run)
    values = _parse_values(args.axis, args.values)
    key = "beta" if args.axis == "beta" else "aug_count"
    out = Path(args.out)
    jobs = []
    for v in values:
        try:
            vcfg = config_from_mapping({key: str(v)}, cfg)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        jobs.append((vcfg, perturb, paths, str(out / f"{args.axis}={v}")))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows = []
    for v, m in zip(values, results):
        m = m or {}
        rows.append([v, m.get("accuracy"), m.get("macro_f1"), m.get("ise_f1"), m.get("ise_accuracy")])
    table = _tsv([args.axis, "acc", "macro_f1", "ise_f1", "ise_acc"], rows)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.tsv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    run["config"]["sweep"] = {"axis": args.axis, "values": values}
    run["outputs"] = [str(out / "sweep.tsv")] + [j[3] for j in jobs]
    return EXIT_OK


COMMANDS = {
    "iv-demo": cmd_iv_demo,
    "synth-gen": cmd_synth_gen,
    "perturb": cmd_perturb,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def _manifest_path(args) -> Path:
    if args.manifest:
        return Path(args.manifest)
    if getattr(args, "out", None):
        return Path(args.out) / "manifest.json"
    return Path(f"{args.command}.manifest.json")


def _replay_argv(args, argv: Sequence[str], run: dict) -> list[str]:
    """The original argv with the resolved seed pinned, so a replay ignores the environment."""
    argv = list(argv)
    if "seed" in run and "--seed" not in argv and args.command != "eval":
        argv += ["--seed", str(run["seed"])]
    return argv


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    run = {"command": args.command, "version": __version__, "started": _now(), "inputs": [], "outputs": []}
    code = EXIT_OK
    try:
        code = COMMANDS[args.command](args, run)
    except UsageError as exc:
        code, run["error"] = EXIT_USAGE, str(exc)
    except (WeakInstrumentError, DegenerateTreatmentError, TrainingDivergedError, FloatingPointError) as exc:
        code, run["error"] = EXIT_NUMERIC, str(exc)
    except CheckpointError as exc:
        code, run["error"] = EXIT_ARTIFACT, str(exc)
    except (OSError, CorpusFormatError) as exc:
        code, run["error"] = EXIT_IO, str(exc)
    except ValueError as exc:
        code, run["error"] = EXIT_USAGE, str(exc)
    if "error" in run:
        print(f"isaiv {args.command}: error: {run['error']}", file=sys.stderr)
    run["argv"] = _replay_argv(args, argv, run)
    run["exit_code"] = code
    run["finished"] = _now()
    try:
        _write_json(_manifest_path(args), run)
    except OSError as exc:
        print(f"isaiv {args.command}: could not write manifest: {exc}", file=sys.stderr)
        code = code or EXIT_IO
    return code


if __name__ == "__main__":
    sys.exit(main())
