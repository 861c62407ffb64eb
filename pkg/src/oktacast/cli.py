"""Command-line interface: ``oktacast {generate,run,compare,pit,dm-matrix}``.

Exit codes: 0 on success, 1 when a run completed no method at all, 2 for
usage errors (missing or invalid config, refusal to overwrite outputs).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import SynthConfig, load_dataset, save_dataset, synth_generate
from .pipeline import ExperimentConfig, run_experiment
from .records import save_model
from .reports import dm_matrix, pit_table, skill_table, summary_table

log = logging.getLogger("oktacast")

MANIFEST = "manifest.json"


class UsageError(Exception):
    """Bad input from the command line; maps to exit code 2."""


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def _sha256_file(path) -> str:
    return _sha256_bytes(Path(path).read_bytes())


def _versions() -> dict:
    import numba
    import scipy

    return {
        "oktacast": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "numba": numba.__version__,
    }


def _read_config(path) -> dict:
    """Load a JSON config; a manifest is accepted and yields its config."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {p} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise UsageError(f"config {p} must hold a JSON object")
    if "config" in d and "command" in d:
        d = d["config"]
    return d


def _write_manifest(path, command, config, seeds, inputs=None, outputs=None, extra=None):
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": _sha256_bytes(_canonical(config).encode()),
        "seeds": seeds,
        "versions": _versions(),
        "inputs": inputs or {},
        "outputs": outputs or {},
    }
    manifest.update(extra or {})
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_csv(df: pd.DataFrame, path) -> None:
    df.to_csv(path, index=False, lineterminator="\n")


# --------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    raw = _read_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = SynthConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid generator config: {exc}") from None
    out = Path(args.out)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = synth_generate(cfg)
    save_dataset(ds, out)
    _write_manifest(
        out.with_name(out.name + ".manifest.json"),
        "generate",
        cfg.to_dict(),
        {"seed": cfg.seed},
        outputs={out.name: _sha256_file(out)},
    )
    log.info("wrote %d rows to %s", len(ds.frame), out)
    return 0


def _experiment_config(args):
    raw = _read_config(args.config)
    data = args.data or raw.pop("data", None)
    raw.pop("out", None)
    if args.seed is not None:
        raw["seed"] = args.seed
    if data is None:
        raise UsageError("no dataset given; use --data or a 'data' entry in the config")
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid experiment config: {exc}") from None
    return cfg, Path(data)


def cmd_run(args) -> int:
    cfg, data = _experiment_config(args)
    if not data.is_file():
        raise UsageError(f"dataset not found: {data}")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data)
    res = run_experiment(ds, cfg, n_jobs=args.jobs)

    files = {}

    def emit(df, name):
        _write_csv(df, out / name)
        files[name] = _sha256_file(out / name)

    emit(res.cases, "cases.csv")
    emit(summary_table(res.cases) if len(res.cases) else pd.DataFrame(), "summary.csv")
    emit(res.provenance, "provenance.csv")
    emit(res.failures, "failures.csv")
    if cfg.keep_pmfs and res.pmfs is not None:
        emit(res.pmfs, "pmfs.csv")
    if cfg.keep_models and res.models:
        mdir = out / "models"
        mdir.mkdir(exist_ok=True)
        for (st, lead, mid, window), model in sorted(res.models.items()):
            save_model(model, mdir / f"{st}_L{lead}_{mid}_{window}.json")

    completed = sorted(set(res.cases["method"])) if len(res.cases) else []
    _write_manifest(
        out / MANIFEST,
        "run",
        {**cfg.to_dict(), "data": str(data.resolve())},
        {"seed": cfg.seed},
        inputs={data.name: _sha256_file(data)},
        outputs=files,
        extra={"completed_methods": completed, "n_failures": int(len(res.failures))},
    )
    for _, f in res.failures.iterrows():
        log.warning("failed: %s lead %s %s: %s", f.station_id, f.lead_time, f.method, f.error)
    if not completed:
        print("no method completed; see failures.csv", file=sys.stderr)
        return 1
    return 0


def _load_cases(score_dir):
    d = Path(score_dir)
    path = d / "cases.csv" if d.is_dir() else d
    if not path.is_file():
        raise UsageError(f"no score table at {path}")
    cases = pd.read_csv(path, dtype={"station_id": str})
    if cases.empty:
        raise UsageError(f"score table {path} is empty")
    return cases, (d if d.is_dir() else d.parent)


def _run_config(run_dir) -> dict:
    m = run_dir / MANIFEST
    if m.is_file():
        return json.loads(m.read_text()).get("config", {})
    return {}


def _emit_table(df: pd.DataFrame, out) -> None:
    if out is None:
        df.to_csv(sys.stdout, index=False, lineterminator="\n")
    else:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_csv(df, out)


def cmd_compare(args) -> int:
    cases, run_dir = _load_cases(args.scores)
    run_cfg = _run_config(run_dir)
    boot = run_cfg.get("bootstrap", {})
    reference = args.reference or run_cfg.get("reference", "RAW")
    n_boot = args.n_boot or int(boot.get("n_boot", 2000))
    block = args.block_length or float(boot.get("mean_block_len", 25.0))
    try:
        table = skill_table(
            cases, reference, n_boot=n_boot, mean_block_len=block,
            seed=args.seed or 0, per_station=args.per_station,
        )
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    _emit_table(table, args.out)
    return 0


def cmd_pit(args) -> int:
    cases, _ = _load_cases(args.scores)
    _emit_table(pit_table(cases, args.bins), args.out)
    return 0


def cmd_dm_matrix(args) -> int:
    cases, _ = _load_cases(args.scores)
    methods = args.methods.split(",") if args.methods else None
    try:
        table = dm_matrix(cases, alpha=args.alpha, methods=methods)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit_table(table, args.out)
    return 0


# --------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")

    p = argparse.ArgumentParser(prog="oktacast", description="Cloud-cover ensemble post-processing.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    g.add_argument("--config", help="generator settings (JSON); defaults if omitted")
    g.add_argument("--out", required=True, help="dataset file to write")
    g.add_argument("--force", action="store_true", help="overwrite an existing file")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", parents=[common], help="fit, predict and score an experiment")
    r.add_argument("--config", required=True, help="experiment config or a previous run manifest (JSON)")
    r.add_argument("--data", help="dataset file (overrides the config's 'data')")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--force", action="store_true", help="write into a non-empty directory")
    r.add_argument("--jobs", type=int, default=1, help="parallel (station, lead time) tasks")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", parents=[common], help="skill scores with bootstrap CIs")
    c.add_argument("--scores", required=True, help="run directory or cases.csv")
    c.add_argument("--reference", help="reference method (default: the run's reference)")
    c.add_argument("--n-boot", type=int, help="bootstrap resamples (default: run config or 2000)")
    c.add_argument("--block-length", type=float, help="mean bootstrap block length (default: run config or 25)")
    c.add_argument("--per-station", action="store_true", help="add one row per station")
    c.add_argument("--out", help="CSV file to write (default: stdout)")
    c.set_defaults(func=cmd_compare)

    t = sub.add_parser("pit", parents=[common], help="PIT histogram counts")
    t.add_argument("--scores", required=True, help="run directory or cases.csv")
    t.add_argument("--bins", type=int, default=20)
    t.add_argument("--out", help="CSV file to write (default: stdout)")
    t.set_defaults(func=cmd_pit)

    d = sub.add_parser("dm-matrix", parents=[common], help="share of stations with significant DM tests")
    d.add_argument("--scores", required=True, help="run directory or cases.csv")
    d.add_argument("--alpha", type=float, default=0.05, help="false discovery rate level")
    d.add_argument("--methods", help="comma-separated subset of methods")
    d.add_argument("--out", help="CSV file to write (default: stdout)")
    d.set_defaults(func=cmd_dm_matrix)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"oktacast {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
