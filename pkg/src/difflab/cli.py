"""Command-line driver: ``difflab {verify,sample,train,likelihood,distill,metrics}``.

Configuration is a nested JSON object. ``--config`` merges a file onto the
defaults and ``--set a.b=value`` overrides single fields (values are parsed as
JSON when possible). ``DIFFLAB_SEED`` overrides the seed. Every run writes the
fully resolved configuration to ``<out>/config.json``; passing that file back
with ``--config`` reproduces the outputs.

Exit codes: 0 ok, 1 a verification check failed, 2 configuration error,
3 runtime error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import checks, fixtures
from .evaluation import gaussian_chain_loglik, loglik_importance, mode_occupancy, sample_metrics
from .gaussian import Seed
from .guidance import AnalyticClassifier, CFGPredictor, ClassifierGuidedPredictor, GuidanceConfig, classifier_shift, distill
from .io import read_json, read_samples_csv, write_json, write_loss_csv, write_samples_csv
from .mixture import GaussianMixture
from .nn import MLP, MLPSpec
from .predictor import AnalyticOracle, MLPPredictor, TrainConfig, probe_eps_error, train_eps
from .samplers import SamplerConfig, run_sampler
from .schedule import Schedule, make_constant, make_linear, subgrid

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("verify", "sample", "train", "likelihood", "distill", "metrics")


class ConfigError(ValueError):
    pass


def _dataclass_defaults(cls, drop=("seed",)) -> dict:
    obj = cls()
    return {f.name: getattr(obj, f.name) for f in fields(cls) if f.name not in drop}


def default_config() -> dict:
    sampler = _dataclass_defaults(SamplerConfig)
    sampler["record"] = "final"
    return {
        "seed": 0,
        "out": "difflab_out",
        "threads": None,  # None resolves to the machine's CPU count
        "n_chains": 10_000,
        "data": {"fixture": "b", "path": None},
        "schedule": {"kind": "linear", "T": 1000, "beta_start": 1e-4, "beta_end": 0.02, "path": None},
        "predictor": {"kind": "oracle", "checkpoint": None},
        "sampler": sampler,
        "guidance": _dataclass_defaults(GuidanceConfig, drop=()),
        "train": {**_dataclass_defaults(TrainConfig), "hidden": 128, "depth": 3, "conditional": False},
        "likelihood": {"x0": [0.8], "particles": 4096},
        "distill": {"n_steps": 20, "pool_chains": 4096, "refresh_every": 500},
        "metrics": {"samples": None, "n_energy": 1000},
        "verify": {"suites": ""},
    }


# --- configuration -------------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _merge(base: dict, update: dict, path: str = "") -> None:
    for key, val in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected an object")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val


def set_field(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for i, p in enumerate(parts[:-1]):
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"{'.'.join(parts[: i + 1])}: unknown section")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"{dotted}: unknown field")
    if isinstance(node[parts[-1]], dict):
        raise ConfigError(f"{dotted}: is a section, set its fields instead")
    node[parts[-1]] = value


def resolve_config(config_path: str | None, overrides: list[str], env=None) -> dict:
    env = os.environ if env is None else env
    cfg = default_config()
    if config_path:
        try:
            loaded = read_json(config_path)
        except FileNotFoundError:
            raise ConfigError(f"--config: file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config: invalid JSON: {exc}") from None
        loaded.pop("command", None)
        _merge(cfg, loaded)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, val = item.split("=", 1)
        set_field(cfg, key.strip(), _parse_value(val))
    if env.get("DIFFLAB_SEED") not in (None, ""):
        try:
            cfg["seed"] = int(env["DIFFLAB_SEED"])
        except ValueError:
            raise ConfigError("DIFFLAB_SEED: expected an integer") from None
    if cfg["threads"] is None:
        cfg["threads"] = os.cpu_count() or 1
    _validate(cfg)
    return cfg


def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def _validate(cfg: dict) -> None:
    _require(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed", "expected a non-negative integer")
    _require(isinstance(cfg["threads"], int) and cfg["threads"] >= 1, "threads", "expected a positive integer")
    _require(isinstance(cfg["n_chains"], int) and cfg["n_chains"] >= 0, "n_chains", "expected a non-negative integer")
    _require(cfg["predictor"]["kind"] in ("oracle", "checkpoint"), "predictor.kind", "expected 'oracle' or 'checkpoint'")
    if cfg["predictor"]["kind"] == "checkpoint":
        _require(bool(cfg["predictor"]["checkpoint"]), "predictor.checkpoint", "required when predictor.kind is 'checkpoint'")
    for where in ("data.path", "schedule.path", "predictor.checkpoint", "metrics.samples"):
        sec, key = where.split(".")
        p = cfg[sec][key]
        if p and not Path(p).is_file():
            raise ConfigError(f"{where}: file not found: {p}")
    for sec, cls in (("sampler", SamplerConfig), ("guidance", GuidanceConfig)):
        _build(cls, cfg[sec], sec, seed=cfg["seed"] if sec == "sampler" else None)
    train = {k: v for k, v in cfg["train"].items() if k not in ("hidden", "depth", "conditional")}
    _build(TrainConfig, train, "train", seed=cfg["seed"])


def _build(cls, section: dict, where: str, seed=None):
    kwargs = dict(section)
    if seed is not None:
        kwargs["seed"] = seed
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


# --- building blocks ------------------------------------------------------------------


def load_mixture(cfg: dict) -> GaussianMixture:
    d = cfg["data"]
    if d["path"]:
        try:
            return GaussianMixture.from_dict(read_json(d["path"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"data.path: {exc}") from None
    try:
        return fixtures.get(d["fixture"])
    except ValueError:
        raise ConfigError(f"data.fixture: unknown fixture {d['fixture']!r}; available: {', '.join(fixtures.FIXTURES)}") from None


def load_schedule(cfg: dict) -> Schedule:
    s = cfg["schedule"]
    try:
        if s["path"]:
            return Schedule.from_dict(read_json(s["path"]))
        if s["kind"] == "linear":
            return make_linear(int(s["T"]), float(s["beta_start"]), float(s["beta_end"]))
        if s["kind"] == "constant":
            return make_constant(int(s["T"]), float(s["beta_start"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"schedule: {exc}") from None
    raise ConfigError(f"schedule.kind: expected 'linear' or 'constant', got {s['kind']!r}")


def load_checkpoint(path) -> tuple[MLPPredictor, dict]:
    ck = read_json(path)
    return MLPPredictor(MLP.from_dict(ck["model"]), ck.get("param", "eps")), ck


def build_predictor(cfg: dict, data: GaussianMixture):
    if cfg["predictor"]["kind"] == "oracle":
        return AnalyticOracle(data)
    return load_checkpoint(cfg["predictor"]["checkpoint"])[0]


def sampler_config(cfg: dict) -> SamplerConfig:
    return _build(SamplerConfig, cfg["sampler"], "sampler", seed=cfg["seed"])


def guided(cfg: dict, base, data: GaussianMixture, sched: Schedule, scfg: SamplerConfig):
    """Returns (predictor, mean-shift hook or None) for the configured guidance."""
    g = _build(GuidanceConfig, cfg["guidance"], "guidance")
    if g.mode == "none":
        return base, None
    if g.mode == "cfg":
        if isinstance(base, MLPPredictor) and base.model.spec.n_labels == 0:
            raise ConfigError("guidance.mode: cfg needs a conditional predictor (train with train.conditional=true)")
        return CFGPredictor(base, g), None
    clf = AnalyticClassifier(data)
    if scfg.kind == "ddpm":
        return base, classifier_shift(clf, g, sched)
    return ClassifierGuidedPredictor(base, clf, g), None


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"out: directory not writable: {out}")
    return out


def _moments(x: np.ndarray) -> dict:
    if x.shape[0] == 0:
        return {"mean": None, "cov": None}
    cov = np.cov(x, rowvar=False).reshape(x.shape[1], x.shape[1]) if x.shape[0] > 1 else np.zeros((x.shape[1], x.shape[1]))
    return {"mean": x.mean(axis=0), "cov": cov}


def _summary(out: Path, command: str, cfg: dict, t0: float, **extra) -> dict:
    summary = {"command": command, "config": cfg, "elapsed_seconds": time.perf_counter() - t0, **extra}
    write_json(out / "run_summary.json", summary)
    write_json(out / "config.json", cfg)
    return summary


# --- commands -------------------------------------------------------------------------


def cmd_verify(cfg: dict) -> int:
    t0 = time.perf_counter()
    try:
        selected = checks.select(cfg["verify"]["suites"])
    except KeyError as exc:
        raise ConfigError(f"verify.suites: {exc.args[0]}") from None
    out = _out_dir(cfg)
    results = checks.run_checks(selected, seed=cfg["seed"])
    for r in results:
        print(f"{r.status.upper():16s} {r.name:48s} measured {r.value:.3g}  tol {r.tol:.3g}  {r.detail}")
    failed = [r.name for r in results if r.status == "fail"]
    report = {
        "suites": sorted({c.suite for c in selected}),
        "checks": [r.to_dict() for r in results],
        "n_pass": sum(r.status == "pass" for r in results),
        "n_fail": len(failed),
        "n_known_deviation": sum(r.status == "known_deviation" for r in results),
        "failed": failed,
    }
    write_json(out / "verify_report.json", report)
    _summary(out, "verify", cfg, t0, n_fail=len(failed))
    print(f"{report['n_pass']} passed, {len(failed)} failed, {report['n_known_deviation']} known deviations")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_sample(cfg: dict) -> int:
    t0 = time.perf_counter()
    data, sched = load_mixture(cfg), load_schedule(cfg)
    scfg = sampler_config(cfg)
    pred, shift = guided(cfg, build_predictor(cfg, data), data, sched, scfg)
    out = _out_dir(cfg)
    run = run_sampler(scfg, pred, sched, cfg["n_chains"], dim=data.dim, shift=shift, threads=cfg["threads"])
    write_samples_csv(out / "samples.csv", run.times, run.states)
    final = run.final
    metrics = sample_metrics(final, data, seed=cfg["seed"], n_energy=cfg["metrics"]["n_energy"]).to_dict() if final.shape[0] > 1 else {}
    write_json(out / "metrics.json", metrics)
    _summary(out, "sample", cfg, t0, moments=_moments(final), sampler_seconds=run.elapsed, time_kind=run.time_kind, diagnostics=run.diagnostics)
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    t0 = time.perf_counter()
    data, sched = load_mixture(cfg), load_schedule(cfg)
    tc = cfg["train"]
    tcfg = _build(TrainConfig, {k: v for k, v in tc.items() if k not in ("hidden", "depth", "conditional")}, "train", seed=cfg["seed"])
    n_labels = len(data.classes) if tc["conditional"] else 0
    try:
        spec = MLPSpec(data.dim, hidden=int(tc["hidden"]), depth=int(tc["depth"]), n_labels=n_labels)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    out = _out_dir(cfg)
    pred, losses = train_eps(MLP(spec, seed=Seed(cfg["seed"], 1)), data, sched, tcfg)
    write_json(out / "checkpoint.json", {"model": pred.model.to_dict(), "param": "eps", "schedule": sched.to_dict(), "data": data.to_dict()})
    write_loss_csv(out / "loss.csv", losses)
    extra = {"final_loss": losses[-1][1] if losses else None}
    if data.dim == 2:
        extra["probe_eps_error"] = probe_eps_error(pred, data, sched)
    write_json(out / "metrics.json", extra)
    _summary(out, "train", cfg, t0, **extra)
    return EXIT_OK


def cmd_likelihood(cfg: dict) -> int:
    t0 = time.perf_counter()
    data, sched = load_mixture(cfg), load_schedule(cfg)
    pred = build_predictor(cfg, data)
    x0 = np.atleast_2d(np.asarray(cfg["likelihood"]["x0"], dtype=float))
    if x0.shape[-1] != data.dim:
        x0 = x0.reshape(-1, 1) if data.dim == 1 else x0
    if x0.shape[-1] != data.dim:
        raise ConfigError(f"likelihood.x0: points must have dimension {data.dim}")
    n = int(cfg["likelihood"]["particles"])
    _require(n >= 1, "likelihood.particles", "expected >= 1")
    out = _out_dir(cfg)
    rows = []
    for i, x in enumerate(x0):
        est, se = loglik_importance(x, pred, sched, n, Seed(cfg["seed"], i))
        row = {"x0": x, "log_likelihood": est, "stderr": se}
        if data.dim == 1 and data.n_components == 1 and cfg["predictor"]["kind"] == "oracle":
            exact = gaussian_chain_loglik(float(x[0]), float(data.means[0, 0]), float(data.vars[0]), sched)
            row["exact"] = exact
            row["z"] = (est - exact) / se if np.isfinite(se) and se > 0 else None
        rows.append(row)
    write_json(out / "metrics.json", {"likelihood": rows})
    _summary(out, "likelihood", cfg, t0, likelihood=rows)
    return EXIT_OK


def cmd_distill(cfg: dict) -> int:
    t0 = time.perf_counter()
    data, sched = load_mixture(cfg), load_schedule(cfg)
    base = build_predictor(cfg, data)
    scfg = SamplerConfig(kind="ddim", n_steps=int(cfg["distill"]["n_steps"]), sigma_mode="zero", seed=cfg["seed"], record="final")
    teacher, _ = guided(cfg, base, data, sched, scfg)
    if teacher is base:
        raise ConfigError("guidance.mode: distillation needs a guided teacher (cfg or classifier)")
    tc = cfg["train"]
    tcfg = _build(TrainConfig, {k: v for k, v in tc.items() if k not in ("hidden", "depth", "conditional")}, "train", seed=cfg["seed"])
    out = _out_dir(cfg)
    grid = subgrid(sched, n_steps=scfg.n_steps)
    student = MLP(MLPSpec(data.dim, hidden=int(tc["hidden"]), depth=int(tc["depth"])), seed=Seed(cfg["seed"], 2))
    pred, losses = distill(teacher, sched, grid, data.dim, tcfg, student, pool_chains=int(cfg["distill"]["pool_chains"]), refresh_every=int(cfg["distill"]["refresh_every"]))
    write_json(out / "checkpoint.json", {"model": pred.model.to_dict(), "param": "x0", "schedule": sched.to_dict(), "data": data.to_dict()})
    write_loss_csv(out / "loss.csv", losses)
    t_run = run_sampler(scfg, teacher, sched, cfg["n_chains"], dim=data.dim, threads=cfg["threads"])
    s_run = run_sampler(scfg, pred, sched, cfg["n_chains"], dim=data.dim, threads=cfg["threads"])
    write_samples_csv(out / "samples.csv", s_run.times, s_run.states)
    occ = {"teacher": mode_occupancy(t_run.final, data), "student": mode_occupancy(s_run.final, data)}
    write_json(out / "metrics.json", {"occupancy": occ})
    _summary(out, "distill", cfg, t0, occupancy=occ, moments=_moments(s_run.final))
    return EXIT_OK


def cmd_metrics(cfg: dict) -> int:
    t0 = time.perf_counter()
    path = cfg["metrics"]["samples"]
    _require(bool(path), "metrics.samples", "path to a samples.csv is required")
    data = load_mixture(cfg)
    by_t = read_samples_csv(path)
    if not by_t:
        raise ConfigError(f"metrics.samples: no rows in {path}")
    final = by_t[list(by_t)[-1]]
    if final.shape[-1] != data.dim:
        raise ConfigError(f"metrics.samples: dimension {final.shape[-1]} does not match data dimension {data.dim}")
    out = _out_dir(cfg)
    m = sample_metrics(final, data, seed=cfg["seed"], n_energy=cfg["metrics"]["n_energy"]).to_dict()
    write_json(out / "metrics.json", m)
    _summary(out, "metrics", cfg, t0, metrics=m)
    return EXIT_OK


HANDLERS = {
    "verify": cmd_verify,
    "sample": cmd_sample,
    "train": cmd_train,
    "likelihood": cmd_likelihood,
    "distill": cmd_distill,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file merged onto the defaults")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one field, e.g. sampler.n_steps=20")
    common.add_argument("--out", help="output directory (same as --set out=...)")
    common.add_argument("--threads", type=int, help="worker threads for chain blocks (default: CPU count)")
    p = argparse.ArgumentParser(prog="difflab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    sub.add_parser("show-config", parents=[common], help="print the resolved configuration")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.out:
        overrides.append(f"out={json.dumps(args.out)}")
    if args.threads is not None:
        overrides.append(f"threads={args.threads}")
    try:
        cfg = resolve_config(args.config, overrides)
        if args.command == "show-config":
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return EXIT_OK
        return HANDLERS[args.command](copy.deepcopy(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
