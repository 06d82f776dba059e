"""Command line entry point: ``deepmeanmaps <verb> ...``.

Verbs: gen-synth, train, eval, gradcheck, kernel-bench, experiment-synth.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure (NaN),
5 gradient check failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import layers as L
from .config import OUTPUT_ROOT_ENV, ConfigError, RunConfig, output_root
from .kernels import approximation_errors
from .meanmap import MeanMapLayer
from .network import (SYNTH_KINDS, ExtensionMode, Network, NetworkSpec, SynthNetConfig, VariantFlags,
                      base_cnn, build_synth, extend, grad_check_network, init_params,
                      load_model)
from .synth import DataError, Dataset, generate_dataset, load_dataset, save_dataset
from .tensor import F64, Rng, derive_seed
from .trainer import (DivergenceError, SgdConfig, accuracy_vs_time_csv, evaluate, save_run,
                      train)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 2, 3, 4, 5
NET_KINDS = SYNTH_KINDS + ("extension",)
GRADCHECK_TOL = 1e-5


class GradcheckFailed(Exception):
    pass


# ------------------------------------------------------------------ helpers

def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config, args.set) if args.config else RunConfig.parse("", args.set)
    return cfg


def _out_dir(args, cfg: RunConfig | None, verb: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    name = cfg["run"]["name"] if cfg is not None else "run"
    return output_root() / verb / name


def _write_config(d: Path, cfg: RunConfig) -> None:
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.ini").write_text(cfg.serialize())


def build_network(cfg: RunConfig) -> NetworkSpec:
    n = cfg["network"]
    kind = n["kind"]
    if kind not in NET_KINDS:
        raise ConfigError(f"unknown network kind {kind!r}; valid kinds: {', '.join(NET_KINDS)}")
    net_cfg = cfg.net_config()
    if kind != "extension":
        return build_synth(kind, net_cfg)
    try:
        mode = ExtensionMode(n["mode"])
        variants = VariantFlags.parse(n["variants"], width=n["variant_width"], rate=n["dropout_rate"])
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return extend(base_cnn(net_cfg, n["head_width"]), mode, variants, net_cfg.D,
                  net_cfg.classes, net_cfg.learn_scale)


def _dataset(args, cfg: RunConfig) -> Dataset:
    if getattr(args, "data", None):
        return load_dataset(args.data)
    return generate_dataset(cfg.synth_config())


def _run_training(spec, dataset: Dataset, sgd: SgdConfig, init_seed: int, out: Path,
                  train_split=None, quiet=False):
    if dataset.val is None:
        raise DataError("training needs a validation split; set data.val_per_class > 0")
    params = init_params(spec, init_seed)
    spec.meta["seed"] = init_seed

    def show(rec):
        if not quiet:
            print(f"epoch {rec.epoch:3d}  {rec.split:5s}  top1 {rec.top1:.4f}  "
                  f"top{sgd.topk} {rec.topk:.4f}  loss {rec.loss:.4f}  t {rec.time_s:.1f}s", flush=True)

    result = train(spec, params, train_split or dataset.train, dataset.val, sgd,
                   extra_splits={"test": dataset.test}, on_record=show)
    save_run(out, spec, result)
    test = [r for r in result.log.split("test") if r.epoch == result.snapshots[result.best_index].epoch][0]
    summary = {"best_epoch": result.snapshots[result.best_index].epoch,
               "val_top1": result.snapshots[result.best_index].val_top1,
               "test_top1": test.top1, "test_topk": test.topk, "k": sgd.topk,
               "seconds": result.log.records[-1].time_s}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return result, summary


# ----------------------------------------------------------------- commands

def cmd_gen_synth(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg, "gen-synth")
    dataset = generate_dataset(cfg.synth_config())
    manifest = save_dataset(out, dataset)
    _write_config(out, cfg)
    print(f"manifest: {manifest}")
    for name, split in dataset.splits().items():
        counts = np.bincount(split.labels, minlength=cfg["data"]["classes"])
        print(f"{name}: " + " ".join(f"class{c}={n}" for c, n in enumerate(counts)))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    spec = build_network(cfg)
    dataset = _dataset(args, cfg)
    out = _out_dir(args, cfg, "train")
    _write_config(out, cfg)
    seed = cfg["run"]["master_seed"]
    tag = spec.meta.get("kind") or spec.meta.get("mode")
    _, summary = _run_training(spec, dataset, cfg.sgd_config(derive_seed(seed, "sgd", tag)),
                               derive_seed(seed, "init", tag), out, quiet=args.quiet)
    print(json.dumps(summary))
    print(f"run directory: {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = Path(args.model)
    if not (model / "model.json").is_file():
        raise DataError(f"no model manifest in {model}")
    spec, params = load_model(model)
    dataset = load_dataset(args.data)
    split = dataset.splits().get(args.split)
    if split is None:
        raise DataError(f"dataset has no {args.split!r} split")
    classes = spec.shapes[spec.output][0]
    if not 1 <= args.k <= classes:
        raise ConfigError(f"k must be between 1 and {classes}")
    top1, topk = evaluate(spec, params, split, args.k)
    print(f"top1 = {top1:.4f}  top{args.k} = {topk:.4f}  (n = {len(split)})")
    report = {"split": args.split, "n": len(split), "k": args.k, "top1": top1, "topk": topk}
    print(json.dumps(report))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


LAYER_TARGETS = ("conv", "relu", "maxpool", "fc", "meanmap", "cosine", "gap", "flatten", "dropout")


def _layer_case(name: str, rng: Rng):
    g = rng.generator
    x = g.standard_normal((2, 4, 7, 7))
    if name == "conv":
        return L.Conv2d(g.standard_normal((5, 4, 3, 3)), g.standard_normal(5), stride=2), x
    if name == "relu":
        return L.ReLU(), x
    if name == "maxpool":
        return L.MaxPool(3, 2), x
    if name == "fc":
        return L.FullyConnected(g.standard_normal((6, 10)), g.standard_normal(6)), g.standard_normal((2, 10))
    if name == "meanmap":
        return MeanMapLayer.sample(rng, 16, 4, 2.0, learn_frequencies=True), x
    if name == "cosine":
        return L.Cosine(), x
    if name == "gap":
        return L.GlobalAvgPool(), x
    if name == "flatten":
        return L.Flatten(), x
    if name == "dropout":
        return L.Dropout(0.5, rng.spawn("mask")), x
    raise ConfigError(f"unknown layer {name!r}; valid: {', '.join(LAYER_TARGETS)}")


def gradcheck_network_target(target: str):
    """``<kind>-desk`` for the synthetic nets, ``<mode>[:variants]`` for extensions."""
    cfg = SynthNetConfig.desk(learn_frequencies=True)
    if target.endswith("-desk") and target[:-5] in SYNTH_KINDS:
        return build_synth(target[:-5], cfg), False
    mode, _, variants = target.partition(":")
    try:
        mode = ExtensionMode(mode)
        flags = VariantFlags.parse(variants or "freq")
    except ValueError:
        valid = [f"{k}-desk" for k in SYNTH_KINDS] + [f"{m.value}[:variants]" for m in ExtensionMode]
        raise ConfigError(f"unknown network target {target!r}; valid: {', '.join(valid)}") from None
    return extend(base_cnn(cfg), mode, flags, cfg.D, cfg.classes, True), flags.dropout


def cmd_gradcheck(args) -> int:
    rng = Rng(args.seed)
    if args.scope == "layer":
        layer, x = _layer_case(args.target, rng)
        report = L.grad_check(layer, x, step=args.step, training=args.target == "dropout",
                              max_entries=args.entries, seed=args.seed, corrupt=args.corrupt)
    else:
        spec, training = gradcheck_network_target(args.target)
        params = init_params(spec, args.seed, F64)
        x = rng.generator.random((args.batch, *spec.input_shape))
        labels = rng.generator.integers(0, spec.shapes[spec.output][0], size=args.batch)
        Network(spec, params, args.seed).calibrate(x, args.seed)
        report = grad_check_network(spec, params, x, labels, step=args.step,
                                    max_entries=args.entries, seed=args.seed,
                                    training=training, corrupt=args.corrupt)
    for name, err in sorted(report.errors.items()):
        print(f"{name:28s} max rel err {err:.3e}")
    print(f"checked {report.checked} entries, skipped {report.skipped} kink points")
    print(f"worst: {report.worst_name} rel err {report.worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps({"errors": report.errors, "worst": report.worst,
                                              "worst_name": report.worst_name,
                                              "checked": report.checked,
                                              "skipped": report.skipped}, indent=2) + "\n")
    if not report.passed(GRADCHECK_TOL):
        raise GradcheckFailed(f"gradient check failed at {report.worst_name}")
    print("PASS")
    return EXIT_OK


def cmd_kernel_bench(args) -> int:
    try:
        Ds = [int(v) for v in args.D.split(",")]
    except ValueError:
        raise ConfigError(f"--D must be a comma-separated list of integers, got {args.D!r}") from None
    if any(D < 1 for D in Ds) or args.trials < 1 or args.dim < 1 or not args.sigma > 0:
        raise ConfigError("D, trials and dim must be >= 1 and sigma > 0")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["D", "median_err", "max_err"])
    for D in Ds:
        errs = approximation_errors(D, args.trials, args.sigma, args.dim, args.seed)
        w.writerow([D, repr(float(np.median(errs))), repr(float(errs.max()))])
    sys.stdout.write(buf.getvalue())
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "kernel_bench.csv").write_text(buf.getvalue())
        (d / "config.json").write_text(json.dumps(
            {"D": Ds, "trials": args.trials, "sigma": args.sigma, "dim": args.dim,
             "seed": args.seed, "normalization": "unbiased"}, indent=2) + "\n")
    return EXIT_OK


def cmd_experiment_synth(args) -> int:
    """mml / hid / lin on a small and the full training subset (six runs)."""
    cfg = _load_config(args)
    out = _out_dir(args, cfg, "experiment-synth")
    _write_config(out, cfg)
    dataset = _dataset(args, cfg)
    seed = cfg["run"]["master_seed"]
    small = cfg["experiment"]["small_per_class"]
    full = int(np.bincount(dataset.train.labels).min())
    if not 1 <= small <= full:
        raise ConfigError(f"experiment.small_per_class must be in [1, {full}]")
    rows, curves = [], []
    for subset, per_class in (("small", small), ("full", full)):
        split = dataset.train.subset_per_class(per_class)
        for kind in SYNTH_KINDS:
            run = f"{kind}_{subset}"
            spec = build_synth(kind, cfg.net_config())
            sgd = cfg.sgd_config(derive_seed(seed, "sgd", kind))
            t0 = time.perf_counter()
            result, summary = _run_training(spec, dataset, sgd, derive_seed(seed, "init", kind),
                                            out / run, train_split=split, quiet=True)
            rows.append({"run": run, "kind": kind, "subset": subset, "train_per_class": per_class,
                         **summary})
            for line in accuracy_vs_time_csv(result.log).splitlines()[1:]:
                curves.append(f"{run},{line}")
            print(f"{run:10s} test top1 {summary['test_top1']:.4f}  val top1 "
                  f"{summary['val_top1']:.4f}  best epoch {summary['best_epoch']}  "
                  f"({time.perf_counter() - t0:.0f}s)", flush=True)
    (out / "curves.csv").write_text("run,split,time_s,top1\n" + "\n".join(curves) + "\n")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (out / "summary.csv").write_text(buf.getvalue())
    print(f"summary: {out / 'summary.csv'}")
    return EXIT_OK


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepmeanmaps",
                                description="Mean map layer networks on synthetic texture data.",
                                epilog=f"Default output root: ${OUTPUT_ROOT_ENV} or ./runs")
    sub = p.add_subparsers(dest="verb", required=True)

    def with_config(sp, data=False):
        sp.add_argument("--config", help="key = value config file with [sections]")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
        sp.add_argument("--out", help="output directory (default: <root>/<verb>/<run.name>)")
        if data:
            sp.add_argument("--data", help="existing dataset directory (default: generate)")

    sp = sub.add_parser("gen-synth", help="render the synthetic texture dataset")
    with_config(sp)
    sp.set_defaults(fn=cmd_gen_synth)

    sp = sub.add_parser("train", help="train one network")
    with_config(sp, data=True)
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="top-1 / top-k accuracy of a saved model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--out", help="write the JSON report here")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("gradcheck", help="central-difference gradient check")
    sp.add_argument("scope", choices=("layer", "net"))
    sp.add_argument("target", help=f"layer: {', '.join(LAYER_TARGETS)}; net: mml-desk, "
                                   "hid-desk, lin-desk, <mode>[:variants]")
    sp.add_argument("--step", type=float, default=1e-6)
    sp.add_argument("--entries", type=int, default=24, help="entries sampled per parameter")
    sp.add_argument("--batch", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    sp.add_argument("--out", help="write the JSON report here")
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("kernel-bench", help="random feature approximation error versus D")
    sp.add_argument("--D", default="1,16,64,256,1024,4096")
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--dim", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="directory for kernel_bench.csv")
    sp.set_defaults(fn=cmd_kernel_bench)

    sp = sub.add_parser("experiment-synth", help="the six-run synthetic comparison")
    with_config(sp, data=True)
    sp.set_defaults(fn=cmd_experiment_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except GradcheckFailed as err:
        print(f"FAIL: {err}", file=sys.stderr)
        return EXIT_GRADCHECK
    except ValueError as err:  # invalid values caught by the library validators
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
