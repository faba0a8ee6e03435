"""Command-line entry point.

    corrspec lsd|clt|test|size|power|qq --config FILE.json --seed U64 --reps INT --out DIR [--workers N]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .clt import Elliptical, Linear
from .errors import ConfigurationError, NumericalError
from .experiments import (ExperimentConfig, _version, failure_kind, power_curves, qq_data,
                          run_clt_experiment, run_lsd_experiment, run_power_experiment,
                          run_size_experiment)
from .htest import run_test
from .io import read_matrix

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_EXPERIMENT = {"lsd": "LSD", "clt": "CLT", "size": "Size", "power": "Power", "qq": "QQ"}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="corrspec", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=["lsd", "clt", "test", "size", "power", "qq"])
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    ap.add_argument("--reps", type=int, default=None, help="replications per cell")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--workers", type=int, default=None, help="worker processes")
    return ap


def _load_json(path: Path) -> dict:
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigurationError("config must be a JSON object")
    return d


def _resolve(base: Path, p: str) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def _experiment_config(cmd: str, raw: dict, base: Path, args) -> ExperimentConfig:
    d = dict(raw)
    want = _EXPERIMENT[cmd]
    if d.setdefault("experiment", want) != want:
        raise ConfigurationError(f"config says experiment={d['experiment']!r} but command is {cmd!r}")
    if isinstance(d.get("R"), str):
        d["R"] = read_matrix(_resolve(base, d["R"])).tolist()
    if d.get("R") is not None:
        d.setdefault("model", "Custom")
        d.setdefault("p_grid", [len(d["R"])])
    for key, val in (("seed", args.seed), ("replications", args.reps), ("workers", args.workers)):
        if val is not None:
            d[key] = val
    d["output"] = str(args.out)
    return ExperimentConfig.from_dict(d)


def _run_experiment(cmd: str, cfg: ExperimentConfig, out: Path) -> tuple[list, bool]:
    if cmd == "size":
        table = run_size_experiment(cfg)
        files = table.write(out)
    elif cmd == "power":
        table = run_power_experiment(cfg)
        files = table.write(out) + power_curves(table).write(out, "power_curves")
    elif cmd == "qq":
        res = qq_data(cfg)
        table = res.table
        files = table.write(out)
        (out / "qq.csv").write_text(res.to_csv())
        files.append("qq.csv")
    elif cmd == "lsd":
        res = run_lsd_experiment(cfg)
        table = res.table
        files = table.write(out)
        (out / "density.csv").write_text(res.density.to_csv())
        files.append("density.csv")
    else:
        res = run_clt_experiment(cfg)
        table = res.table
        files = table.write(out)
        (out / "moments.json").write_text(json.dumps([m.to_dict() for m in res.moments], indent=2))
        files.append("moments.json")
    for r in table.rows:
        if r["status"] != "ok":
            print(f"cell p={r['p']} n={r['n']}: {r['status']}", file=sys.stderr)
    return files, failure_kind(table)


def _structure(d: dict):
    kind = d.get("structure", "elliptical")
    if kind == "elliptical":
        return Elliptical(float(d.get("tau", 2.0)))
    if kind == "linear":
        return Linear(float(d.get("beta_x", 0.0)))
    raise ConfigurationError("structure must be 'elliptical' or 'linear'")


def _run_single_test(raw: dict, base: Path, out: Path) -> tuple[list, dict]:
    known = {"data", "R0", "alpha", "structure", "tau", "beta_x", "G", "variant"}
    extra = set(raw) - known
    if extra:
        raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
    for key in ("data", "R0"):
        if key not in raw:
            raise ConfigurationError(f"test config needs {key!r}")
    X = read_matrix(_resolve(base, raw["data"]))
    R0 = read_matrix(_resolve(base, raw["R0"]))
    G = read_matrix(_resolve(base, raw["G"])) if raw.get("G") else None
    alpha = float(raw.get("alpha", 0.05))
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha must lie in (0, 1)")
    rep = run_test(X, R0, alpha=alpha, structure=_structure(raw), G=G,
                   variant=raw.get("variant", "corrected"))
    d = rep.to_dict()
    (out / "report.json").write_text(json.dumps(d, indent=2))
    return ["report.json"], d


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    cfg_path = Path(args.config)
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        raw = _load_json(cfg_path)
        out.mkdir(parents=True, exist_ok=True)
        failed = None
        if args.command == "test":
            files, report = _run_single_test(raw, cfg_path.parent, out)
            echo = raw
            digest = hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()
            print(json.dumps({k: report[k] for k in ("t1", "t2", "z1", "z2", "tm", "decision")}))
        else:
            cfg = _experiment_config(args.command, raw, cfg_path.parent, args)
            files, failed = _run_experiment(args.command, cfg, out)
            echo = cfg.to_dict()
            digest = cfg.content_hash()  # ignores workers and output path
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    meta = {
        "command": args.command,
        "config": echo,
        "config_hash": digest,
        "outputs": {f: hashlib.sha256((out / f).read_bytes()).hexdigest() for f in files},
        "version": _version(),
        "numpy": np.__version__,
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
    }
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2))
    return {None: EXIT_OK, "configuration": EXIT_CONFIG, "numerical": EXIT_NUMERIC}[failed]


if __name__ == "__main__":
    sys.exit(main())
