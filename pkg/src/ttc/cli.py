"""Command-line entry point: ``ttc generate | run | fit | predict | explain | similarity``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Failures print a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    DataError,
    DuffingConfig,
    IntegrationError,
    LabeledDataset,
    generate_duffing_dataset,
    label_by_median_lifespan,
    load_cmapss,
    load_csv_dataset,
    save_csv_dataset,
    truncate_cycles,
)
from .evaluate import (
    EARLY_GRID,
    VALID_METHODS,
    early_detection_curve,
    explain,
    make_method,
    nested_cv,
    similarity_report,
    sweep_alphabet_wordlength,
)
from .pipeline import StageError, TtcConfig, TtcModel, fit, is_ttc_acronym

log = logging.getLogger("ttc")

DATA_ENV = "TTC_DATA_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

PROFILES = {
    "desk": {"samples_per_class": 100, "inner_folds": 5, "sweep_folds": 5},
    "full": {"samples_per_class": 500, "inner_folds": 10, "sweep_folds": 10},
}


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# experiment config


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from exc


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def provenance(cfg: dict, fingerprint: str, seed: int) -> dict:
    return {"config_hash": config_hash(cfg), "dataset_fingerprint": fingerprint, "seed": seed, "version": __version__}


def validate_methods(names) -> list[str]:
    bad = [m for m in names if m.upper() not in {v.upper() for v in VALID_METHODS} and not is_ttc_acronym(m)]
    if bad:
        raise UsageError(f"unknown method(s) {bad}; valid: {', '.join(VALID_METHODS)}")
    return list(names)


def resolve_path(path: str) -> Path:
    p = Path(path)
    if not p.is_absolute() and not p.exists() and os.environ.get(DATA_ENV):
        p = Path(os.environ[DATA_ENV]) / p
    return p


def _snr_value(s):
    if s is None or (isinstance(s, str) and s.lower() == "clean"):
        return None
    return float(s)


def _snr_name(s) -> str:
    return "clean" if s is None or math.isinf(s) else f"{s:g}dB"


def duffing_configs(spec: dict, seed: int, profile: str) -> list[DuffingConfig]:
    known = {f.name for f in fields(DuffingConfig)}
    kw = {k: v for k, v in spec.items() if k in known}
    unknown = set(spec) - known - {"snr_levels"}
    if unknown:
        raise UsageError(f"unknown Duffing fields {sorted(unknown)}")
    kw.setdefault("samples_per_class", PROFILES[profile]["samples_per_class"])
    kw["seed"] = seed
    if "initial_state" in kw:
        kw["initial_state"] = tuple(kw["initial_state"])
    levels = spec.get("snr_levels", [kw.pop("snr_db", None)])
    kw.pop("snr_db", None)
    return [DuffingConfig(snr_db=_snr_value(s), **kw) for s in levels]


def load_dataset_arg(path: str, truncate: int | None = None) -> LabeledDataset:
    """A manifest (``.json``, or a directory containing ``manifest.json``) or a C-MAPSS text file."""
    p = resolve_path(path)
    if p.is_dir():
        p = p / "manifest.json"
    if not p.exists():
        raise FileNotFoundError(f"data not found: {p}")
    if p.suffix == ".json":
        ds = load_csv_dataset(p)
    else:
        ds = label_by_median_lifespan(load_cmapss(p))
    if truncate:
        ds = truncate_cycles(ds, truncate)
    return ds


def datasets_from_config(cfg: dict, seed: int, profile: str) -> list[tuple[str, LabeledDataset]]:
    spec = cfg.get("dataset")
    if not spec:
        raise UsageError("config has no 'dataset' entry")
    if "duffing" in spec:
        out = []
        for dc in duffing_configs(spec["duffing"], seed, profile):
            out.append((f"duffing_{_snr_name(dc.snr_db)}", generate_duffing_dataset(dc)))
        return out
    paths = spec.get("paths") or ([spec["path"]] if "path" in spec else [])
    if not paths:
        raise UsageError("dataset needs 'duffing', 'path' or 'paths'")
    return [(Path(p).stem, load_dataset_arg(p, spec.get("truncate"))) for p in paths]


# --------------------------------------------------------------------------
# commands


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        if not force:
            raise UsageError(f"{out} exists; pass --force to overwrite")
        if out.is_dir():
            shutil.rmtree(out)
        else:
            out.unlink()
    out.mkdir(parents=True, exist_ok=True)


def cmd_generate(args, cfg: dict) -> int:
    spec = cfg.get("dataset", {}).get("duffing", cfg.get("duffing", {}))
    out = Path(args.out or cfg.get("output", "data"))
    _prepare_out(out, args.force)
    for dc in duffing_configs(spec, args.seed, args.profile):
        ds = generate_duffing_dataset(dc)
        name = f"duffing_{_snr_name(dc.snr_db)}"
        save_csv_dataset(ds, out / name)
        print(f"{name}\t{ds.fingerprint()}")
    return EXIT_OK


def cmd_run(args, cfg: dict) -> int:
    methods = validate_methods(cfg.get("methods", ["MF"]))
    tasks = cfg.get("tasks", ["cv"])
    grids = cfg.get("grids", {})
    prof = PROFILES[args.profile]
    folds = int(cfg.get("folds", 10))
    inner = int(cfg.get("inner_folds", prof["inner_folds"]))
    out = Path(args.out or cfg.get("output", "results"))
    _prepare_out(out, args.force)
    summary = {"provenance": None, "datasets": {}}
    for name, ds in datasets_from_config(cfg, args.seed, args.profile):
        prov = provenance(cfg, ds.fingerprint(), args.seed)
        summary["provenance"] = {k: v for k, v in prov.items() if k != "dataset_fingerprint"}
        entry = {"fingerprint": ds.fingerprint(), "cv": {}}
        if "cv" in tasks:
            rows = []
            for m in methods:
                rep = nested_cv(ds, make_method(m, args.seed, **grids), folds, inner, args.seed, args.workers)
                rep.write_csv(out / f"{name}_cv_{m}.csv")
                entry["cv"][m] = {
                    "mean_accuracy": rep.mean_accuracy, "fold_accuracies": rep.fold_accuracies,
                    "precision": rep.precision, "recall": rep.recall, "selected": rep.selected,
                }
                rows.append([m, rep.mean_accuracy, rep.precision, rep.recall])
                log.info("%s %s accuracy %.4f", name, m, rep.mean_accuracy)
            with (out / f"{name}_accuracy.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["method", "accuracy", "precision", "recall"])
                w.writerows(rows)
        if "early" in tasks:
            ec = cfg.get("early", {})
            entry["early"] = {}
            with (out / f"{name}_early.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["method", "cycles_observed", "accuracy"])
                for m in methods:
                    curve = early_detection_curve(
                        ds, make_method(m, args.seed, **grids), ec.get("train_cycles", 150),
                        ec.get("grid", EARLY_GRID), folds, inner, args.seed,
                    )
                    entry["early"][m] = dict(zip(curve.cycles_observed, curve.accuracy))
                    w.writerows([m, c, a] for c, a in zip(curve.cycles_observed, curve.accuracy))
        if "sweep" in tasks:
            sc = cfg.get("sweep", {})
            res = sweep_alphabet_wordlength(
                ds, sc.get("base", "TTC-SME"), sc.get("phi_grid", [2, 4, 6, 8, 10, 12, 15]),
                sc.get("L_grid", [1, 2, 4, 6, 8, 10]), sc.get("folds", prof["sweep_folds"]),
                sc.get("inner_folds", inner), args.seed, grids.get("C_grid", (1e-2, 1e-1, 1.0, 1e1, 1e2)),
            )
            res.write_csv(out / f"{name}_sweep.csv")
        summary["datasets"][name] = entry
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps({n: {m: round(v["mean_accuracy"], 4) for m, v in e["cv"].items()}
                      for n, e in summary["datasets"].items()}))
    return EXIT_OK


def _ttc_config(args, cfg: dict) -> TtcConfig:
    base = dict(cfg.get("ttc", {}))
    method = args.method or base.pop("method", "TTC-SME")
    base.pop("method", None)
    if not is_ttc_acronym(method):
        raise UsageError(f"fit needs a TTC variant, got {method!r}")
    base["seed"] = args.seed
    return TtcConfig.from_acronym(method, **base)


def cmd_fit(args, cfg: dict) -> int:
    ds = load_dataset_arg(args.data, args.truncate)
    model = fit(ds, _ttc_config(args, cfg))
    out = Path(args.out or "model.json")
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    d = model.to_dict()
    d["provenance"] = provenance(cfg or model.config.to_dict(), ds.fingerprint(), args.seed)
    out.write_text(json.dumps(d, indent=1))
    print(f"{model.acronym}\t{len(model.vocabulary)} terms\t{ds.fingerprint()}")
    return EXIT_OK


def _load_model(path: str) -> TtcModel:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"model file not found: {p}")
    return TtcModel.load(p)


def cmd_predict(args, cfg: dict) -> int:
    model = _load_model(args.model)
    ds = load_dataset_arg(args.data, args.truncate)
    labels, margins = model.predict_dataset(ds)
    rows = [[s.unit_id, int(y), repr(float(m))] for s, y, m in zip(ds.series, labels, margins)]
    _write_rows(args.out, ["unit_id", "label", "margin"], rows)
    return EXIT_OK


def cmd_explain(args, cfg: dict) -> int:
    model = _load_model(args.model)
    ds = load_dataset_arg(args.data, args.truncate)
    rows = []
    for a in explain(model, ds, args.top_k):
        for uid, t0, t1 in a.occurrences:
            rows.append([a.term, a.channel, repr(a.weight), uid, t0, t1])
    _write_rows(args.out, ["term", "channel", "weight", "unit_id", "t_start", "t_end"], rows)
    return EXIT_OK


def cmd_similarity(args, cfg: dict) -> int:
    model = _load_model(args.model)
    ds = load_dataset_arg(args.data, args.truncate)
    rep = similarity_report(model, ds, args.percentile)
    rows = []
    for i, a in enumerate(rep.unit_ids):
        for j, b in enumerate(rep.unit_ids):
            rows.append([a, b, repr(float(rep.similarity[i, j])), int(rep.mask[i, j])])
    _write_rows(args.out, ["unit_a", "unit_b", "similarity", "mask"], rows)
    within, cross = rep.densities()
    print(json.dumps({"threshold": rep.threshold, "within_density": within, "cross_density": cross}))
    return EXIT_OK


def _write_rows(out: str | None, header, rows) -> None:
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    finally:
        if out:
            fh.close()


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "similarity": cmd_similarity,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, default=None, help="run seed (overrides the config)")
    common.add_argument("--profile", choices=sorted(PROFILES), default=None, help="desk (default) or full")
    common.add_argument("--workers", type=int, default=1, help="parallel outer folds")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ttc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write Duffing datasets")
    sub.add_parser("run", parents=[common], help="run the experiments of a config")
    for name in ("fit", "predict", "explain", "similarity"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--data", required=True, help=f"manifest, dataset dir or C-MAPSS file (relative to ${DATA_ENV})")
        p.add_argument("--truncate", type=int, default=None, help="keep only the first N cycles of each unit")
        if name == "fit":
            p.add_argument("--method", help="TTC variant acronym, e.g. TTC-SME")
        else:
            p.add_argument("--model", required=True)
        if name == "explain":
            p.add_argument("--top-k", type=int, default=10)
        if name == "similarity":
            p.add_argument("--percentile", type=float, default=75.0)
    return parser


def _error(kind: str, exc: Exception, code: int) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            if "seed" not in cfg and args.command in ("generate", "run"):
                raise UsageError("a seed is required (--seed or 'seed' in the config)")
            args.seed = int(cfg.get("seed", 0))
        cfg["seed"] = args.seed
        args.profile = args.profile or cfg.get("profile", "desk")
        if args.profile not in PROFILES:
            raise UsageError(f"unknown profile {args.profile!r}; valid: {', '.join(sorted(PROFILES))}")
        cfg["profile"] = args.profile
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        return _error("usage", exc, EXIT_USAGE)
    except (DataError, FileNotFoundError, json.JSONDecodeError) as exc:
        return _error("data", exc, EXIT_DATA)
    except (IntegrationError, FloatingPointError, np.linalg.LinAlgError, StageError) as exc:
        return _error("numeric", exc, EXIT_NUMERIC)
    except ValueError as exc:
        return _error("data", exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
