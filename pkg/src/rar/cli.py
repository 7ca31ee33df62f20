"""``rar`` command line: data generation, training, evaluation, ablation, benchmarks, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .bench import MIN_TRIALS, run_bench
from .core import Config, ConfigError
from .model import RARModel
from .train import (ABLATION_ROWS, TrainingDiverged, ablation_table, evaluate, gradcheck, run_ablation,
                    train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(value) -> str:
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _banner(command: str, settings: dict) -> None:
    print(f"# rar {command}")
    for key, value in settings.items():
        print(f"# {key}={_fmt(value)}")
    sys.stdout.flush()


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value config file; flags below override it")
    group = p.add_argument_group("config overrides")
    for f in dataclasses.fields(Config):
        group.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", metavar="V")


def _config_from(args) -> Config:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if args.config is not None:
        if not args.config.exists():
            raise FileNotFoundError(f"config file {args.config} not found")
        return Config.from_file(args.config, **overrides)
    return Config.from_dict(overrides)


def _cfg_settings(cfg: Config) -> dict:
    return {f"config.{k}": v for k, v in cfg.to_dict().items()}


_SPEC_TYPES = {f.name: f.type for f in dataclasses.fields(data_mod.SyntheticSpec)}


def _spec_flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _spec_type(name: str):
    t = _SPEC_TYPES[name]
    return {"int": int, "float": float, "bool": _parse_bool}[t if isinstance(t, str) else t.__name__]


# commands

def cmd_gen_data(args) -> int:
    spec = data_mod.SyntheticSpec(**{k: getattr(args, k) for k in _SPEC_TYPES})
    _banner("gen-data", {"out": args.out, **dataclasses.asdict(spec)})
    spec.validate()
    ds = data_mod.generate(spec)
    data_mod.save(ds, args.out)
    counts = {s: len(ds.indices(s)) for s in data_mod.SPLITS}
    print(f"wrote {args.out}: {len(ds.interactions)} interactions "
          + " ".join(f"{s}={n}" for s, n in counts.items()) + f", {len(ds.exposure)} exposures")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from(args)
    _banner("train", {"data": args.data, "out": args.out, "log": args.log, **_cfg_settings(cfg)})
    ds = data_mod.load(args.data)
    result = train(ds, cfg, log_path=args.log,
                   on_epoch=lambda m: print(f"epoch {m.epoch} train_loss={m.train_loss:.6f} "
                                            f"val_auc={m.val_auc:.4f} val_gauc={m.val_gauc:.4f}", flush=True))
    result.model.save(args.out, {"data": str(args.data), "epochs_run": len(result.history)})
    print(f"saved checkpoint {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _banner("eval", {"data": args.data, "checkpoint": args.checkpoint, "split": args.split})
    model, meta = RARModel.load(args.checkpoint)
    ds = data_mod.load(args.data)
    if (ds.n_users, ds.n_items) != (model.n_users, model.n_items):
        raise data_mod.DataError("dataset id ranges do not match the checkpoint")
    a, g = evaluate(model, ds, args.split)
    print(f"auc={a!r} gauc={g!r}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config_from(args)
    variants = None if args.variants is None else tuple(v.strip() for v in args.variants.split(","))
    known = {a for _, a in ABLATION_ROWS}
    if variants is not None and not set(variants) <= known:
        raise ConfigError(f"unknown variant(s) {sorted(set(variants) - known)}; choose from {sorted(known)}")
    _banner("ablate", {"data": args.data, "split": args.split, "variants": variants or "all",
                       "table": args.table, **_cfg_settings(cfg)})
    ds = data_mod.load(args.data)
    rows = run_ablation(ds, cfg, args.split, variants)
    print(ablation_table(rows))
    if args.table is not None:
        with open(args.table, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("variant,ablation,auc,gauc\n")
            for r in rows:
                fh.write(f"{r.label},{r.ablation},{r.auc!r},{r.gauc!r}\n")
    return EXIT_OK


def cmd_bench_selection(args) -> int:
    sizes = [int(x) for x in args.pool_sizes.split(",") if x.strip()]
    if not sizes:
        raise ConfigError("--pool-sizes must list at least one size")
    settings = {k: v for k, v in vars(args).items() if k not in ("func",)}
    _banner("bench-selection", settings)
    report = run_bench(sizes, k=args.k, m_bits=args.m_bits, dim=args.dim, batch=args.batch,
                       trials=args.trials, warmup=args.warmup, threads=args.threads, seed=args.seed)
    print(report.table())
    if args.out is not None:
        Path(args.out).write_text(report.delimited(args.sep), encoding="utf-8")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_gradcheck(args) -> int:
    cfg = _config_from(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    _banner("gradcheck", {"data": args.data or "synthetic", "records": args.records, "seeds": seeds,
                          "tolerance": args.tolerance, "coords": args.coords, **_cfg_settings(cfg)})
    worst = 0.0
    for seed in seeds:
        if args.data is not None:
            ds = data_mod.load(args.data)
        else:
            ds = data_mod.generate(data_mod.SyntheticSpec(n_users=60, n_items=120, r=cfg.r, l=cfg.l,
                                                          exposure_depth=min(20, cfg.r), seed=seed))
        model = RARModel(cfg.replace(seed=seed), ds.n_users, ds.n_items, ds.exposure)
        idx = np.random.default_rng(seed).choice(len(ds.interactions), args.records, replace=False)
        report = gradcheck(model, ds.batch(idx, with_pools=model.augmented), tolerance=args.tolerance,
                           n_coords=args.coords, seed=seed)
        worst = max(worst, report.max_rel_error)
        for t in report.tensors:
            print(f"seed={seed} {t.name:<14} checked={t.n_checked:<4} skipped_at_kink={t.n_skipped:<3} "
                  f"max_rel_error={t.max_rel_error:.3e}")
        for t in report.failures():
            print(f"FAIL seed={seed} {t.name}: analytic={t.worst_analytic!r} numeric={t.worst_numeric!r}")
    ok = worst < args.tolerance
    print(f"gradcheck {'passed' if ok else 'FAILED'}: max_rel_error={worst:.3e} tolerance={args.tolerance:g}")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rar", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--out", type=Path, required=True)
    defaults = data_mod.SyntheticSpec()
    for name in _SPEC_TYPES:
        p.add_argument(_spec_flag(name), dest=name, type=_spec_type(name), default=getattr(defaults, name))
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    p.add_argument("--log", type=Path, help="per-epoch metrics log (CSV)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=data_mod.SPLITS, default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train every ablation variant and print the comparison table")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=data_mod.SPLITS, default="test")
    p.add_argument("--variants", help="comma-separated subset of " + ",".join(a for _, a in ABLATION_ROWS))
    p.add_argument("--table", type=Path, help="also write the table as CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("bench-selection", help="time hamming vs exact top-k selection")
    p.add_argument("--pool-sizes", default="10000,20000,40000,80000,160000")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--m-bits", type=int, default=64)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--batch", type=int, default=1, help="queries per timed step")
    p.add_argument("--trials", type=int, default=MIN_TRIALS)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--threads", type=int, default=1, help=">1 runs the queries of a step in a thread pool")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="write rows as a delimited file")
    p.add_argument("--sep", default=",")
    p.set_defaults(func=cmd_bench_selection)

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--data", type=Path, help="dataset directory (default: a small synthetic one)")
    p.add_argument("--records", type=int, default=10)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--coords", type=int, default=50, help="coordinates sampled per tensor")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"rar: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, data_mod.DataError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"rar: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
