"""Command-line front end: ``smoothquad run`` and ``smoothquad presets``."""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from . import analysis
from .estimators import AsgqConfig, Method, PricingPlan, price
from .hierarchy import PathGrid
from .models import GbmSpec, HestonScheme, HestonSpec, ParameterError
from .payoffs import make_basket_call, make_call, make_digital, make_put
from .reference import reference_price
from .sampling import ConfigError, LatticeConfig, McConfig
from .smoothing import SmoothingConfig

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
KINDS = ("price", "quad-study", "stat-study", "weak-error", "mixed-diff", "smoothing-study", "decay-probe")

# Column order per experiment kind; documented in docs/formats.md.
COLUMNS = {
    "price": ["method", "smoothed", "n_steps", "richardson", "value", "stat_error", "work", "reference",
              "rel_error"],
    "quad-study": ["budget", "smoothed_rel_error", "raw_rel_error"],
    "stat-study": ["samples", "ci_halfwidth", "value"],
    "weak-error": ["dt", "abs_error", "ci_halfwidth", "value"],
    "mixed-diff": ["direction", "k", "abs_delta"],
    "smoothing-study": ["parameter", "setting", "rel_error"],
    "decay-probe": ["level", "mean_abs_derivative"],
}

PRESETS = {
    "gbm-digital": {
        "model": {"type": "gbm", "x0": "100", "sigma": "0.4", "T": "1", "n_steps": "8"},
        "payoff": {"type": "digital", "strike": "100"},
        "reference": 0.42074,
    },
    "gbm-call": {
        "model": {"type": "gbm", "x0": "100", "sigma": "0.4", "T": "1", "n_steps": "8"},
        "payoff": {"type": "call", "strike": "100"},
        "reference": 15.8519,
    },
    "basket-gbm-4d": {
        "model": {"type": "gbm", "d": "4", "x0": "100", "sigma": "0.4", "rho": "0.3", "T": "1", "n_steps": "4"},
        "payoff": {"type": "basket_call", "strike": "100", "weights": "0.25"},
        "reference": 11.04,
    },
    "heston-digital": {
        "model": {"type": "heston", "s0": "100", "v0": "0.04", "mu": "0", "rho": "-0.9", "kappa": "1",
                  "theta": "0.0025", "xi": "0.1", "scheme": "ou_based", "T": "1", "n_steps": "8"},
        "payoff": {"type": "digital", "strike": "100"},
        "reference": 0.5146,
    },
    "heston-call": {
        "model": {"type": "heston", "s0": "100", "v0": "0.04", "mu": "0", "rho": "-0.9", "kappa": "1",
                  "theta": "0.0025", "xi": "0.1", "scheme": "ou_based", "T": "1", "n_steps": "8"},
        "payoff": {"type": "call", "strike": "100"},
        "reference": 6.33254,
    },
}


class ValidationError(ValueError):
    """Bad configuration; the message names the offending field."""


def derive_seed(seed: int, name: str) -> int:
    """Independent stream seed for a named consumer of randomness."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class RunConfig:
    kind: str
    model: object
    payoff: object
    grid: PathGrid
    plan: PricingPlan
    seed: int
    fmt: str
    output: Path | None
    study: dict = field(default_factory=dict)
    reference: float | None = None
    raw: dict = field(default_factory=dict)


def _get(section, key, conv=str, default=None, required=False, where=""):
    if key not in section:
        if required:
            raise ValidationError(f"missing field {where}.{key}")
        return default
    text = section[key]
    try:
        return conv(text)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"field {where}.{key} = {text!r}: {exc}") from None


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(float(x)) for x in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _positive(values, name):
    if any(not v > 0 for v in np.atleast_1d(values)):
        raise ValidationError(f"field {name} must be positive")
    return values


def _build_model(sec):
    kind = _get(sec, "type", str, "gbm", where="model").lower()
    T = _positive(_get(sec, "T", float, 1.0, where="model"), "model.T")
    n_steps = _get(sec, "n_steps", int, 8, where="model")
    if n_steps < 1:
        raise ValidationError("field model.n_steps must be >= 1")
    if kind == "gbm":
        d = _get(sec, "d", int, None, where="model")
        x0 = _positive(_get(sec, "x0", _floats, required=True, where="model"), "model.x0")
        sigma = _positive(_get(sec, "sigma", _floats, required=True, where="model"), "model.sigma")
        d = d or max(len(x0), len(sigma))
        x0 = np.broadcast_to(x0, d) if len(x0) == 1 else np.asarray(x0)
        sigma = np.broadcast_to(sigma, d) if len(sigma) == 1 else np.asarray(sigma)
        if len(x0) != d or len(sigma) != d:
            raise ValidationError("fields model.x0 and model.sigma must have 1 or d entries")
        rho = _get(sec, "rho", float, 0.0, where="model")
        drift = _get(sec, "drift", float, 0.0, where="model")
        try:
            model = GbmSpec.equicorrelated(x0, sigma, rho, drift=drift)
        except ParameterError as exc:
            raise ValidationError(f"model: {exc}") from None
        return model, PathGrid(n_steps, T, d)
    if kind == "heston":
        params = {}
        for key, default in (("s0", 100.0), ("v0", 0.04), ("mu", 0.0), ("rho", 0.0), ("kappa", 1.0),
                             ("theta", 0.04), ("xi", 0.1)):
            params[key] = _get(sec, key, float, default, where="model")
        _positive(params["s0"], "model.s0")
        for key in ("v0", "kappa", "theta", "xi"):
            if params[key] < 0:
                raise ValidationError(f"field model.{key} must be nonnegative")
        scheme = _get(sec, "scheme", str, "ou_based", where="model")
        try:
            scheme = HestonScheme(scheme)
        except ValueError:
            raise ValidationError(f"field model.scheme: unknown scheme {scheme!r}") from None
        try:
            model = HestonSpec(**params, scheme=scheme,
                               ou_processes=_get(sec, "ou_processes", int, None, where="model"))
        except ParameterError as exc:
            raise ValidationError(f"model: {exc}") from None
        return model, PathGrid(n_steps, T, 1)
    raise ValidationError(f"field model.type: unknown model {kind!r}")


def _build_payoff(sec, d):
    kind = _get(sec, "type", str, required=True, where="payoff").lower()
    K = _get(sec, "strike", float, required=True, where="payoff")
    _positive(K, "payoff.strike")
    if kind == "basket_call":
        w = _get(sec, "weights", _floats, [1.0 / d], where="payoff")
        w = np.broadcast_to(w, d) if len(w) == 1 else np.asarray(w)
        if len(w) != d:
            raise ValidationError("field payoff.weights must have 1 or d entries")
        return make_basket_call(w, K)
    builders = {"call": make_call, "put": make_put, "digital": make_digital}
    if kind not in builders:
        raise ValidationError(f"field payoff.type: unknown payoff {kind!r}")
    if d != 1:
        raise ValidationError(f"payoff.type {kind} needs a single-asset model")
    return builders[kind](K)


def _build_method(sec, seed):
    name = _get(sec, "name", str, "asgq", where="method").lower()
    try:
        method = Method(name)
    except ValueError:
        raise ValidationError(f"field method.name: unknown method {name!r}") from None
    try:
        if method is Method.ASGQ:
            cfg = AsgqConfig(_get(sec, "budget", int, 1000, where="method"),
                             _get(sec, "tol", float, 0.0, where="method"),
                             _get(sec, "max_level", int, 9, where="method"))
        elif method is Method.RQMC:
            cfg = LatticeConfig(_get(sec, "n_points", int, 2**10, where="method"),
                                _get(sec, "n_shifts", int, 30, where="method"), derive_seed(seed, "rqmc-shifts"))
        else:
            cfg = McConfig(_get(sec, "n_samples", int, 10**5, where="method"), derive_seed(seed, "mc"),
                           _get(sec, "batch_size", int, 2**16, where="method"))
    except ConfigError as exc:
        raise ValidationError(f"method: {exc}") from None
    smoothed = _get(sec, "smoothed", _bool, True, where="method")
    richardson = _get(sec, "richardson", int, 0, where="method")
    return method, cfg, smoothed, richardson


def _build_smoothing(sec):
    kw = {}
    for key, conv in (("m_lag", int), ("tol_newton", float), ("max_newton_iters", int), ("m_leg", int),
                      ("bracket_halfwidth", float), ("multi_root_scan_points", int), ("far_root", float),
                      ("scale_tails", _bool)):
        if key in sec:
            kw[key] = _get(sec, key, conv, where="smoothing")
    try:
        return SmoothingConfig(**kw)
    except ValueError as exc:
        raise ValidationError(f"smoothing: {exc}") from None


def config_from_sections(sections: dict, seed: int | None = None, fmt: str | None = None,
                         output: str | None = None) -> RunConfig:
    exp = sections.get("experiment", {})
    kind = _get(exp, "kind", str, "price", where="experiment")
    if kind not in KINDS:
        raise ValidationError(f"field experiment.kind: expected one of {', '.join(KINDS)}, got {kind!r}")
    seed = seed if seed is not None else _get(exp, "seed", int, 0, where="experiment")
    fmt = fmt or _get(exp, "format", str, "csv", where="experiment")
    if fmt not in ("csv", "jsonl"):
        raise ValidationError(f"field experiment.format: expected csv or jsonl, got {fmt!r}")
    output = output or _get(exp, "output", str, None, where="experiment")
    if "model" not in sections or "payoff" not in sections:
        raise ValidationError("config needs [model] and [payoff] sections")
    model, grid = _build_model(sections["model"])
    payoff = _build_payoff(sections["payoff"], grid.d)
    method, cfg, smoothed, richardson = _build_method(sections.get("method", {}), seed)
    smoothing = _build_smoothing(sections.get("smoothing", {}))
    try:
        plan = PricingPlan(model, payoff, grid, method, smoothed, smoothing, cfg, richardson)
    except ConfigError as exc:
        raise ValidationError(f"method: {exc}") from None
    study = dict(sections.get("study", {}))
    reference = _get(exp, "reference", float, None, where="experiment")
    return RunConfig(kind, model, payoff, grid, plan, seed, fmt, Path(output) if output else None, study,
                     reference, {k: dict(v) for k, v in sections.items()})


def load_config(path, **overrides) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    sections = {name: dict(parser[name]) for name in parser.sections()}
    return config_from_sections(sections, **overrides)


def _reference(cfg: RunConfig) -> float:
    if cfg.reference is not None:
        return cfg.reference
    ref = reference_price(cfg.model, cfg.payoff, cfg.grid.T)
    if ref is None:
        raise ValidationError("no built-in reference for this problem; set experiment.reference")
    return ref


def execute(cfg: RunConfig, threads: int = 1):
    """Run the experiment; returns ``(rows, extra metadata)``."""
    plan, st = cfg.plan, cfg.study
    if cfg.kind == "price":
        est = price(plan)
        ref = cfg.reference if cfg.reference is not None else reference_price(cfg.model, cfg.payoff, cfg.grid.T)
        row = {"method": plan.method.value, "smoothed": plan.smoothed, "n_steps": plan.grid.n_steps,
               "richardson": plan.richardson_level, "value": est.value, "stat_error": est.stat_error,
               "work": est.work, "reference": ref if ref is not None else float("nan"),
               "rel_error": abs(est.value - ref) / abs(ref) if ref else float("nan")}
        return [row], {}
    if cfg.kind == "quad-study":
        budgets = _get(st, "budgets", _ints, [100, 200, 500, 1000], where="study")
        res = analysis.quadrature_error_study(plan, budgets, reference=_reference(cfg))
        return res.rows(), _fits(res)
    if cfg.kind == "stat-study":
        samples = _get(st, "samples", _ints, [2**k for k in range(6, 13)], where="study")
        res = analysis.statistical_error_study(plan, samples)
        return res.rows(), _fits(res)
    if cfg.kind == "weak-error":
        n_grid = _get(st, "n_steps", _ints, [2, 4, 8, 16], where="study")
        res = analysis.weak_error_study(cfg.model, cfg.payoff, n_grid, plan.method_config, plan.smoothed,
                                        _reference(cfg), cfg.grid.T, plan.smoothing)
        return res.rows(), _fits(res)
    if cfg.kind == "mixed-diff":
        dirs = _get(st, "directions", _ints, [0], where="study")
        k_max = _get(st, "k_max", int, 4, where="study")
        res = analysis.mixed_difference_study(plan, dirs, k_max)
        cols = {f"dir_{dirs[0]}": res.metric, **res.columns}
        rows = [{"direction": int(name[4:]), "k": int(k), "abs_delta": float(v)}
                for name, vals in cols.items() for k, v in zip(res.axis, vals)]
        return rows, _fits(res)
    if cfg.kind == "smoothing-study":
        m_grid = _get(st, "m_lag", _ints, [4, 8, 16, 32, 64], where="study")
        t_grid = _get(st, "tol_newton", _floats, [1e-2, 1e-4, 1e-6, 1e-8, 1e-10], where="study")
        budget = _get(st, "budget", int, 1000, where="study")
        a, b = analysis.smoothing_parameter_study(plan, m_grid, t_grid, budget=budget)
        rows = []
        for res, name in ((a, "m_lag"), (b, "tol_newton")):
            if res is not None:
                rows += [{"parameter": name, "setting": float(x), "rel_error": float(e)}
                         for x, e in zip(res.axis, res.metric)]
        return rows, {"m_lag_fit": asdict(a.fits["rel_error"]) if a else None,
                      "tol_fit": asdict(b.fits["rel_error"]) if b else None}
    if cfg.kind == "decay-probe":
        n_probe = _get(st, "n_probe_points", int, 64, where="study")
        rep = analysis.derivative_decay_probe(plan, None, n_probe, seed=derive_seed(cfg.seed, "probe"))
        rows = [{"level": int(lv), "mean_abs_derivative": float(m)}
                for lv, m in zip(rep.levels, rep.mean_abs_derivative)]
        return rows, {"ratio": rep.ratio, "level_ratios": rep.level_ratios.tolist()}
    raise ValidationError(f"unknown experiment kind {cfg.kind!r}")


def _fits(res) -> dict:
    return {"fits": {k: asdict(v) for k, v in res.fits.items()}, "flag": res.flag}


_INT_COLUMNS = {"budget", "samples", "k", "level", "n_steps", "work", "direction", "richardson"}


def _plain(v, col=""):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        v = v.item()
    if col in _INT_COLUMNS and isinstance(v, float) and v.is_integer():
        return int(v)
    return v


def write_rows(rows, kind: str, fmt: str, out: Path) -> None:
    cols = COLUMNS[kind]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: repr(v) if isinstance(v, float) else v for c in cols for v in [_plain(r[c], c)]})
        out.write_text(buf.getvalue())
    else:
        out.write_text("".join(json.dumps({c: _plain(r[c], c) for c in cols}) + "\n" for r in rows))


def _version() -> str:
    try:
        return metadata.version("smoothquad")
    except metadata.PackageNotFoundError:
        return "unknown"


def describe_plan(cfg: RunConfig) -> dict:
    p = cfg.plan
    return {"kind": cfg.kind, "model": type(cfg.model).__name__, "payoff": cfg.payoff.name,
            "n_steps": p.grid.n_steps, "T": p.grid.T, "d": p.grid.d, "method": p.method.value,
            "method_config": {k: _plain(v) for k, v in asdict(p.method_config).items()},
            "smoothed": p.smoothed, "richardson": p.richardson_level,
            "smoothing": asdict(p.smoothing), "seed": cfg.seed, "format": cfg.fmt,
            "output": str(cfg.output) if cfg.output else None, "study": cfg.study}


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("SMOOTHQUAD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"SMOOTHQUAD_THREADS={env!r} is not an integer") from None
    return 1


def cmd_run(args) -> int:
    try:
        threads = _threads(args.threads)
        if args.preset:
            if args.preset not in PRESETS:
                raise ValidationError(f"unknown preset {args.preset!r}; see `smoothquad presets`")
            pre = PRESETS[args.preset]
            sections = {"experiment": {"reference": str(pre["reference"])}, "model": pre["model"],
                        "payoff": pre["payoff"]}
            if args.config:
                parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
                parser.optionxform = str
                parser.read(args.config)
                for name in parser.sections():
                    sections.setdefault(name, {}).update(parser[name])
            cfg = config_from_sections(sections, args.seed, args.format, args.out)
        elif args.config:
            cfg = load_config(args.config, seed=args.seed, fmt=args.format, output=args.out)
        else:
            raise ValidationError("either --config or --preset is required")
        if args.dry_run:
            print(json.dumps(describe_plan(cfg), indent=2, default=str))
            return EXIT_OK
        out = cfg.output or Path(f"{cfg.kind}.{cfg.fmt}")
    except (ValidationError, ConfigError, ParameterError) as exc:
        print(f"smoothquad: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    t0 = time.perf_counter()
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(threads):
            rows, extra = execute(cfg, threads)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_rows(rows, cfg.kind, cfg.fmt, out)
    except ValidationError as exc:
        print(f"smoothquad: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"smoothquad: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    meta = {"config": cfg.raw, "resolved": describe_plan(cfg), "seed": cfg.seed, "version": _version(),
            "wall_time_s": time.perf_counter() - t0, "threads": threads, "columns": COLUMNS[cfg.kind], **extra}
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2, default=_json_default))
    print(out)
    return EXIT_OK


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return None
    return str(o)


def format_presets() -> str:
    lines = [f"{'name':<16}{'model':<54}{'payoff':<28}reference"]
    for name, pre in PRESETS.items():
        m = pre["model"]
        if m["type"] == "gbm":
            model = f"GBM d={m.get('d', '1')} sigma={m['sigma']} rho={m.get('rho', '0')} x0={m['x0']}"
        else:
            model = (f"Heston v0={m['v0']} rho={m['rho']} kappa={m['kappa']} theta={m['theta']} "
                     f"xi={m['xi']}")
        p = pre["payoff"]
        payoff = f"{p['type']} K={p['strike']}" + (f" c={p['weights']}" if "weights" in p else "")
        lines.append(f"{name:<16}{model:<54}{payoff:<28}{pre['reference']}")
    return "\n".join(lines)


def cmd_presets(args) -> int:
    if args.name:
        if args.name not in PRESETS:
            print(f"smoothquad: unknown preset {args.name!r}", file=sys.stderr)
            return EXIT_INVALID
        print(json.dumps(PRESETS[args.name], indent=2))
        return EXIT_OK
    print(format_presets())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smoothquad", description="Numerical smoothing pricer and convergence studies")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a config file or preset")
    run.add_argument("--config", help="path to a .cfg file")
    run.add_argument("--preset", help="start from a shipped preset (see `presets`)")
    run.add_argument("--out", help="output file (overrides experiment.output)")
    run.add_argument("--seed", type=int, help="top-level seed (overrides experiment.seed)")
    run.add_argument("--threads", type=int, help="worker cap (default: $SMOOTHQUAD_THREADS or 1)")
    run.add_argument("--format", choices=("csv", "jsonl"), help="output format")
    run.add_argument("--dry-run", action="store_true", help="validate and print the resolved plan only")
    run.set_defaults(func=cmd_run)
    pre = sub.add_parser("presets", help="list the shipped reference experiments")
    pre.add_argument("name", nargs="?", help="show one preset in full")
    pre.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
