"""Command-line front end: generate, select, train, eval, sweep."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import DomainTag, FeatureSetError, load_feature_set, normalize_rows
from .model import load_checkpoint, save_checkpoint
from .query import STRATEGIES, SelectionResult, read_annotations, write_annotation_template
from .synth import SeparationInfeasible, ShiftSpec, generate, train_source_head, write_benchmark
from .train import RunOptions, TrainConfig, accuracy, run_mhpl, select

log = logging.getLogger("mhpl")

ABLATIONS = ("full", "no_np", "no_na", "no_ndr", "no_nf_weight")


class UsageError(Exception):
    pass


# --- helpers ----------------------------------------------------------------

def parse_budget(value, n: int) -> int:
    """'0.05' -> fraction of n, '30' -> absolute count."""
    text = str(value).strip()
    if any(c in text for c in ".eE"):
        frac = float(text)
        if not 0.0 < frac <= 1.0:
            raise UsageError(f"budget fraction {frac} outside (0, 1]")
        m = int(round(frac * n))
    else:
        m = int(text)
    if m < 0 or m > n:
        raise UsageError(f"budget {m} exceeds the {n} available samples")
    return m


def run_options(strategy: str, ablation: str = "full", query_epoch: int = 0) -> RunOptions:
    if strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    opts = RunOptions(strategy=strategy, query_epoch=query_epoch,
                      labeled_weight="np" if strategy == "mhpl" else "plain")
    if ablation == "full":
        return opts
    if strategy != "mhpl" and ablation != "no_nf_weight":
        raise UsageError(f"ablation {ablation!r} only applies to the mhpl strategy")
    if ablation == "no_np":
        opts.use_np = False
    elif ablation == "no_na":
        opts.use_na = False
    elif ablation == "no_ndr":
        opts.use_ndr = False
    elif ablation == "no_nf_weight":
        opts.labeled_weight = "plain"
    else:
        raise UsageError(f"unknown ablation {ablation!r}")
    return opts


def parse_ablation(text: str):
    """'full' | 'no_ndr' | ... | 'query_epoch=5' -> (ablation, query_epoch)."""
    text = text.strip()
    if text.startswith("query_epoch="):
        return "full", int(text.split("=", 1)[1])
    if text not in ABLATIONS:
        raise UsageError(f"unknown ablation {text!r}")
    return text, 0


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def target_like_fraction(fs, selected):
    if fs.domain_tags is None or len(selected) == 0:
        return None
    return float(np.mean(fs.domain_tags[np.asarray(selected)] == DomainTag.TARGET_LIKE))


def _load_target(args):
    fs = load_feature_set(args.features, K=getattr(args, "k", None))
    fs = normalize_rows(fs)
    if fs.degenerate_rows:
        log.warning("%d all-zero feature rows: %s", len(fs.degenerate_rows), list(fs.degenerate_rows)[:10])
    return fs


def _source_model(args, seed):
    if getattr(args, "model", None):
        return load_checkpoint(args.model)
    if getattr(args, "train_source", None):
        src = normalize_rows(load_feature_set(args.train_source))
        return train_source_head(src, seed=seed)
    raise UsageError("need --model CHECKPOINT or --train-source SOURCE_FEATURES")


def _train_config(args, seed) -> TrainConfig:
    kw = {k: getattr(args, k) for k in ("alpha", "beta", "lr", "momentum", "batch_size", "q")
          if getattr(args, k, None) is not None}
    epochs = getattr(args, "epochs", None)
    if epochs == 0:
        kw.update(epochs=1, n_b=0)
    elif epochs is not None:
        kw["epochs"] = epochs
    if getattr(args, "n_b", None) is not None:
        kw["n_b"] = args.n_b
    return TrainConfig(seed=seed, **kw)


# --- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    spec = ShiftSpec(K=args.k, d=args.d, n_s=args.n_s, n_t=args.n_t, sigma=args.sigma,
                     shift=args.shift, target_like_frac=args.target_like_frac, seed=args.seed,
                     spread=args.spread, outlier_frac=args.outlier_frac)
    man = write_benchmark(spec, args.out)
    log.info("wrote %s (target tags %s)", args.out, man["tag_counts"])
    return 0


def cmd_select(args) -> int:
    fs = _load_target(args)
    model = _source_model(args, args.seed)
    m = parse_budget(args.budget, fs.n)
    opts = run_options(args.strategy, args.ablation)
    cfg = _train_config(args, args.seed)
    res = select(fs, model, m, cfg, opts)
    res.seed = args.seed
    out = Path(args.out)
    write_json(out / "selection.json", res.to_dict())
    if args.annotate_template:
        write_annotation_template(res, args.annotate_template)
    log.info("selected %d of %d samples with %s", len(res.selected), fs.n, args.strategy)
    return 0


def cmd_train(args) -> int:
    fs = _load_target(args)
    model = _source_model(args, args.seed)
    cfg = _train_config(args, args.seed)
    opts = run_options(args.strategy, args.ablation, args.query_epoch)
    selection = None
    if args.selection:
        selection = SelectionResult.from_dict(json.loads(Path(args.selection).read_text()), n=fs.n)
        if opts.labeled_weight == "np" and selection.scores is None:
            raise UsageError("selection file carries no NP scores; use a baseline strategy or reselect")
        m = len(selection.selected)
    else:
        m = parse_budget(args.budget, fs.n)
    if args.labels:
        oracle = read_annotations(args.labels)
        needed = selection.selected if selection is not None else None
        if needed is not None:
            missing = [i for i in needed if i not in oracle]
            if missing:
                raise UsageError(f"annotation file lacks labels for selected indices {missing[:10]}")
    elif fs.labels is not None:
        oracle = fs.labels
    else:
        raise UsageError("no --labels file and the feature file carries no labels")
    try:
        res = run_mhpl(fs, model, cfg, m, oracle=oracle, opts=opts, selection=selection)
    except KeyError as exc:
        raise UsageError(f"missing annotation: {exc}") from None
    res.selection.seed = args.seed
    out = Path(args.out)
    report = res.report(cfg, opts)
    report["selection"]["target_like_frac"] = target_like_fraction(fs, res.selection.selected)
    write_json(out / "report.json", report)
    save_checkpoint(res.model, out / "model.ckpt")
    log.info("final accuracy %s (source %s)", res.final_acc, res.source_acc)
    return 0


def cmd_eval(args) -> int:
    fs = _load_target(args)
    model = load_checkpoint(args.model)
    if fs.labels is None:
        raise UsageError("evaluation needs labeled features")
    pred = model.predict(fs.features)
    rec = {"schema_version": 1, "n": fs.n, "accuracy": accuracy(model, fs),
           "per_class_accuracy": [float(np.mean(pred[fs.labels == k] == k)) if np.any(fs.labels == k) else None
                                  for k in range(fs.K)]}
    if fs.domain_tags is not None:
        for tag in (DomainTag.SOURCE_LIKE, DomainTag.TARGET_LIKE):
            mask = fs.domain_tags == tag
            rec[f"accuracy_{tag.name.lower()}"] = float(np.mean(pred[mask] == fs.labels[mask])) if mask.any() else None
    if args.out:
        write_json(Path(args.out) / "eval.json", rec)
    print(json.dumps(rec, sort_keys=True))
    return 0


# --- sweep ------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Mirror of the sweep config file; one key per field.

    Data is either ``data = synthetic`` (with ``spec.*`` keys overriding the
    generator defaults, generated per seed) or ``source = PATH`` and
    ``target = PATH`` feature files.
    """
    strategies: list
    seeds: list
    budgets: list = field(default_factory=lambda: ["0.05"])
    ablations: list = field(default_factory=lambda: ["full"])
    data: str = "synthetic"
    source: str | None = None
    target: str | None = None
    out: str = "sweep_out"
    workers: int = 1
    spec: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def validate(self):
        if not self.strategies:
            raise UsageError("config lists no strategies")
        if not self.seeds:
            raise UsageError("config lists no seeds")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise UsageError(f"unknown strategy {s!r}")
        for a in self.ablations:
            parse_ablation(a)
        if self.data not in ("synthetic", "files"):
            raise UsageError("data must be 'synthetic' or 'files'")
        if self.data == "files" and not (self.source and self.target):
            raise UsageError("data = files needs source and target paths")


_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)} | {"query_epoch": "int"}
_SPEC_KEYS = {f.name: f.type for f in fields(ShiftSpec)}


def _coerce(text, typ):
    typ = str(typ)
    if "bool" in typ:
        return text.lower() in ("1", "true", "yes", "on")
    if "int" in typ and "float" not in typ:
        return int(text)
    if "float" in typ:
        return float(text)
    return text


def parse_config(text: str) -> ExperimentConfig:
    """``key = value`` lines, ``#`` comments, comma-separated lists."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value

    def listed(key, default=None):
        if key not in raw:
            return default
        return [v.strip() for v in raw.pop(key).split(",") if v.strip()]

    try:
        cfg = ExperimentConfig(
            strategies=listed("strategies", []),
            seeds=[int(s) for s in listed("seeds", [])],
            budgets=listed("budgets", ["0.05"]),
            ablations=listed("ablations", ["full"]),
        )
        for key in ("data", "source", "target", "out"):
            if key in raw:
                setattr(cfg, key, raw.pop(key))
        if "workers" in raw:
            cfg.workers = int(raw.pop("workers"))
        for key in list(raw):
            if key.startswith("spec."):
                name = key[5:]
                if name not in _SPEC_KEYS or name == "seed":
                    raise UsageError(f"unknown generator key {key!r}")
                cfg.spec[name] = _coerce(raw.pop(key), _SPEC_KEYS[name])
            elif key in _TRAIN_KEYS and key != "seed":
                cfg.train[key] = _coerce(raw.pop(key), _TRAIN_KEYS[key])
    except ValueError as exc:
        raise UsageError(f"malformed config value: {exc}") from None
    if raw:
        raise UsageError(f"unknown config keys: {', '.join(sorted(raw))}")
    cfg.validate()
    return cfg


def run_cell(cell) -> dict:
    cfg, strategy, budget, seed, ablation = cell
    if cfg.data == "synthetic":
        source, target = generate(ShiftSpec(seed=seed, **cfg.spec))
    else:
        source = normalize_rows(load_feature_set(cfg.source))
        target = normalize_rows(load_feature_set(cfg.target))
    model = train_source_head(source, seed=seed)
    abl, query_epoch = parse_ablation(ablation)
    train_kw = dict(cfg.train)
    query_epoch = train_kw.pop("query_epoch", query_epoch) if ablation == "full" else query_epoch
    tcfg = TrainConfig(seed=seed, **train_kw)
    m = parse_budget(budget, target.n)
    res = run_mhpl(target, model, tcfg, m, opts=run_options(strategy, abl, query_epoch))
    return {
        "strategy": strategy, "budget": budget, "m": m, "seed": seed, "ablation": ablation,
        "final_acc": res.final_acc, "source_acc": res.source_acc,
        "target_like_frac_selected": target_like_fraction(target, res.selection.selected),
        "wall_ms": round(res.wall_ms, 3),
    }


CELL_COLUMNS = ["strategy", "budget", "m", "seed", "ablation", "final_acc", "source_acc",
                "target_like_frac_selected", "wall_ms"]


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    cells = [(cfg, s, b, seed, a) for s in cfg.strategies for b in cfg.budgets
             for a in cfg.ablations for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(run_cell, cells))
    return [run_cell(c) for c in cells]


def summarize(rows: list[dict]) -> list[dict]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["strategy"], r["budget"], r["ablation"]), []).append(r)
    out = []
    for (s, b, a), rs in groups.items():
        acc = np.array([r["final_acc"] for r in rs], dtype=float)
        tl = [r["target_like_frac_selected"] for r in rs if r["target_like_frac_selected"] is not None]
        out.append({"strategy": s, "budget": b, "ablation": a, "n_seeds": len(rs),
                    "acc_mean": float(acc.mean()), "acc_std": float(acc.std()),
                    "target_like_mean": float(np.mean(tl)) if tl else None})
    return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_csv(path: Path, rows: list[dict], columns) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def cmd_sweep(args) -> int:
    if not args.config:
        raise UsageError("sweep needs --config FILE")
    cfg = parse_config(Path(args.config).read_text())
    if args.out:
        cfg.out = args.out
    if args.workers:
        cfg.workers = args.workers
    rows = run_sweep(cfg)
    out = Path(cfg.out)
    write_csv(out / "cells.csv", rows, CELL_COLUMNS)
    summary = summarize(rows)
    write_csv(out / "summary.csv", summary,
              ["strategy", "budget", "ablation", "n_seeds", "acc_mean", "acc_std", "target_like_mean"])
    if not args.quiet:
        for r in summary:
            print(f"{r['strategy']:8s} budget={r['budget']:6s} {r['ablation']:14s} "
                  f"acc={r['acc_mean']:.4f}±{r['acc_std']:.4f}")
    return 0


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        parser.add_argument("--seed", type=int, default=default(0))
        parser.add_argument("--out", "-o", default=default(None), help="output directory")
        parser.add_argument("--config", default=default(None))
        parser.add_argument("--quiet", action="store_true", default=default(False))

    # subcommands repeat the global flags without defaults so that a value
    # given before the subcommand is not reset by the subparser
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="mhpl", description=__doc__)
    global_flags(p, lambda v: v)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic shift benchmark")
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--d", type=int, default=16)
    g.add_argument("--n-s", type=int, default=600)
    g.add_argument("--n-t", type=int, default=600)
    g.add_argument("--sigma", type=float, default=0.08)
    g.add_argument("--shift", type=float, default=4.0)
    g.add_argument("--target-like-frac", type=float, default=0.5)
    g.add_argument("--spread", type=float, default=ShiftSpec.spread)
    g.add_argument("--outlier-frac", type=float, default=ShiftSpec.outlier_frac)
    g.set_defaults(func=cmd_generate)

    def data_args(sp, budget=True):
        sp.add_argument("--features", required=True, help="target features (FMX1 or CSV)")
        sp.add_argument("--k", type=int, default=None, help="class count for unlabeled CSV input")
        sp.add_argument("--model", help="source model checkpoint")
        sp.add_argument("--train-source", help="fit a source head on these features instead")
        sp.add_argument("--strategy", default="mhpl")
        sp.add_argument("--ablation", default="full", choices=ABLATIONS)
        sp.add_argument("--q", type=int, default=None)
        if budget:
            sp.add_argument("--budget", default="0.05")

    s = sub.add_parser("select", parents=[common], help="choose samples to annotate")
    data_args(s)
    s.add_argument("--annotate-template", help="write an index,label CSV skeleton here")
    s.set_defaults(func=cmd_select)

    t = sub.add_parser("train", parents=[common], help="adapt with selected labels")
    data_args(t)
    t.add_argument("--selection", help="selection.json from a previous select run")
    t.add_argument("--labels", help="index,label annotation CSV")
    t.add_argument("--epochs", type=int, default=None, help="0 = dry run without updates")
    t.add_argument("--n-b", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--alpha", type=float, default=None)
    t.add_argument("--beta", type=float, default=None)
    t.add_argument("--momentum", type=float, default=None)
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--query-epoch", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint")
    e.add_argument("--features", required=True)
    e.add_argument("--k", type=int, default=None)
    e.add_argument("--model", required=True)
    e.set_defaults(func=cmd_eval)

    w = sub.add_parser("sweep", parents=[common], help="run a strategy x budget x seed grid")
    w.add_argument("--workers", type=int, default=None)
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    if args.out is None and args.command not in ("eval", "sweep"):
        args.out = "."
    try:
        return args.func(args)
    except (UsageError, SeparationInfeasible, FeatureSetError, ValueError, OSError) as exc:
        print(f"mhpl {args.command}: error: {exc}", file=sys.stderr)
        if isinstance(exc, UsageError):
            parser.print_usage(sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
