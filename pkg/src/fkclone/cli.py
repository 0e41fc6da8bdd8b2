"""Command-line front end: ``fkclone {oracle,run,sweep,validate}``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines (lists comma-separated), then explicit flags.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import FkcloneError, ModelError
from .estimators import ALGORITHMS, ESTIMATE_FIELDS, Simulation, estimate_row, estimate_scgf, scaling_sweep
from .model import parse_model_ref, read_model
from .oracle import evolve_marginals, solve_spectral, write_trajectory_csv
from .tilt import tilt

EXIT_OK, EXIT_CONFIG, EXIT_MODEL, EXIT_RUNTIME = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "two_state"
    model_file: str | None = None
    k: tuple = (1.0,)
    c: float = 0.0
    algorithm: str = "cloning"
    n: tuple = (1000,)
    horizon: float = 100.0
    burn_in: float = 0.5
    replicas: int = 20
    seed: int = 0
    threads: int | None = None
    out: str = "."
    trajectory: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}")
        if not 0.0 <= self.burn_in < 1.0:
            raise ConfigError("burn-in must lie in [0, 1)")
        if self.replicas < 1:
            raise ConfigError("replicas must be at least 1")
        if not self.n or min(self.n) < 1:
            raise ConfigError("n must be at least 1")
        if not self.k:
            raise ConfigError("at least one k is required")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def digest(self) -> str:
        """Hash of everything that can change the numbers (not threads or out)."""
        d = asdict(self)
        for key in ("threads", "out"):
            d.pop(key)
        if self.model_file:
            d["model_file"] = hashlib.sha256(Path(self.model_file).read_bytes()).hexdigest()
        blob = json.dumps(d, sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def comment(self) -> str:
        return f"# config={self.digest()} seed={self.seed}\n"

    def load_model(self):
        if self.model_file:
            return read_model(self.model_file)
        return parse_model_ref(self.model)


def _floats(text) -> tuple:
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _ints(text) -> tuple:
    return tuple(int(v) for v in str(text).split(",") if v.strip())


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


CONVERT = {"model": str, "model_file": str, "k": _floats, "c": float, "algorithm": str, "n": _ints,
           "horizon": float, "burn_in": float, "replicas": int, "seed": int, "threads": int, "out": str,
           "trajectory": _bool}


def read_config_file(path) -> dict:
    raw = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONVERT:
            raise ConfigError(f"{path}:{num}: unknown key {key!r}")
        raw[key] = value
    return raw


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = read_config_file(args.config) if args.config else {}
    for key in CONVERT:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    try:
        values = {key: CONVERT[key](val) for key, val in raw.items()}
        return ExperimentConfig(**values)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def _out_path(cfg: ExperimentConfig, name: str) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_oracle(cfg: ExperimentConfig) -> int:
    model = cfg.load_model()
    lines = [cfg.comment(), "k,scgf,gap\n"]
    for i, k in enumerate(cfg.k):
        td = tilt(model, k)
        sol = solve_spectral(td)
        lines.append(f"{k!r},{sol.scgf!r},{sol.gap!r}\n")
        print(f"k={k:g}  scgf={sol.scgf:.12g}  gap={sol.gap:.6g}")
        if cfg.trajectory:
            traj = evolve_marginals(td, np.full(model.size, 1.0 / model.size), cfg.horizon)
            with open(_out_path(cfg, f"trajectory_{i}.csv"), "w", encoding="utf-8", newline="") as fh:
                fh.write(cfg.comment())
                write_trajectory_csv(traj, fh)
    _write(_out_path(cfg, "oracle.csv"), "".join(lines))
    return EXIT_OK


def _oracle_or_none(td):
    try:
        return solve_spectral(td).scgf
    except FkcloneError:
        return None


def cmd_run(cfg: ExperimentConfig) -> int:
    model = cfg.load_model()
    buf = io.StringIO()
    buf.write(cfg.comment())
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ESTIMATE_FIELDS)
    for ik, k in enumerate(cfg.k):
        td = tilt(model, k)
        oracle = _oracle_or_none(td)
        for n in cfg.n:
            sim = Simulation(td, cfg.algorithm, n, cfg.horizon, cfg.c)
            res = estimate_scgf(sim, cfg.burn_in, cfg.replicas, cfg.seed, (ik, n), cfg.threads)
            for est in res.values():
                w.writerow(estimate_row(est, k, cfg.c, oracle))
                ref = "" if oracle is None else f"  oracle={oracle:.10g}  err={abs(est.value - oracle):.3g}"
                print(f"k={k:g} N={n} {est.kind:<14} {est.value:.10g} +- {est.stderr:.3g}{ref}")
    _write(_out_path(cfg, "estimates.csv"), buf.getvalue())
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if len(cfg.k) != 1:
        raise ConfigError("sweep takes a single k")
    td = tilt(cfg.load_model(), cfg.k[0])
    rep = scaling_sweep(td, cfg.n, cfg.replicas, cfg.horizon, cfg.seed, algorithm=cfg.algorithm, c=cfg.c,
                        threads=cfg.threads)
    buf = io.StringIO()
    buf.write(cfg.comment())
    buf.write(f"# rmse_slope={rep.fitted_rmse_slope!r} bias_slope={rep.fitted_bias_slope!r}\n")
    rep.write_csv(buf)
    _write(_out_path(cfg, "sweep.csv"), buf.getvalue())
    for row in zip(rep.ns, rep.rmse, rep.bias):
        print(f"N={row[0]:<6d} rmse={row[1]:.4g}  bias={row[2]:.4g}")
    print(f"rmse slope {rep.fitted_rmse_slope:.3f}  bias slope {rep.fitted_bias_slope:.3f}")
    return EXIT_OK


def cmd_validate(cfg: ExperimentConfig) -> int:
    from .validate import run_checks

    results = run_checks(cfg.load_model(), cfg.k, cfg.c)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_RUNTIME


COMMANDS = {"oracle": cmd_oracle, "run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file; flags override it")
    common.add_argument("--model", help="registry model, e.g. ring_current:S=6,p=0.5,q=0.5")
    common.add_argument("--model-file", dest="model_file", help="model file with [rates], [g], [h] sections")
    common.add_argument("--k", help="tilt or comma-separated list")
    common.add_argument("--c", help="selection threshold")
    common.add_argument("--algorithm", choices=ALGORITHMS)
    common.add_argument("--n", help="particle count or comma-separated list")
    common.add_argument("--horizon")
    common.add_argument("--burn-in", dest="burn_in", help="discarded fraction of the horizon")
    common.add_argument("--replicas")
    common.add_argument("--seed")
    common.add_argument("--threads")
    common.add_argument("--out", help="output directory")
    common.add_argument("--trajectory", action="store_const", const="true", default=None,
                        help="oracle: also write the marginal trajectories")
    p = argparse.ArgumentParser(prog="fkclone", description="Particle estimators of scaled cumulant generating functions")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"oracle": "exact SCGF and spectral gap", "run": "replicated particle estimates",
             "sweep": "error scaling over a list of N", "validate": "invariant checks"}
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (FkcloneError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
