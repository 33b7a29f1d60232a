"""Command-line runner: ``tsneflow run`` and ``tsneflow verify``.

Exit codes: 0 success, 1 failed verification check, 2 configuration error,
3 I/O error, 4 error raised by a numerical module. Errors are printed to
stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import affinity_hi as hi
from . import checks
from . import diagnostics as dg
from . import flow
from . import geometry as geo
from .errors import ConfigError, TsneFlowError

EXIT_CHECK, EXIT_CONFIG, EXIT_IO, EXIT_MODULE = 1, 2, 3, 4


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None
    manifold: str | None = None
    n: int | None = None
    perp: float | None = None
    zeta: float | None = None
    t_end: float = 50.0
    step: float = 0.1
    method: str = "rk4"
    seed: int = 0
    out: str = "tsneflow-out"
    record_every: int = 1

    def validate(self) -> "RunConfig":
        if (self.input is None) == (self.manifold is None):
            raise ConfigError("give exactly one of input or manifold", module="cli-runner")
        if self.manifold is not None and self.n is None:
            raise ConfigError("manifold needs n", module="cli-runner")
        if self.input is not None and self.n is not None:
            raise ConfigError("n only applies to a sampled manifold", module="cli-runner")
        if (self.perp is None) == (self.zeta is None):
            raise ConfigError("give exactly one of perp or zeta", module="cli-runner")
        if self.manifold is not None and self.manifold not in geo.KINDS:
            raise ConfigError(f"unknown manifold {self.manifold!r}", module="cli-runner")
        try:
            self.flow_options()
        except ValueError as exc:
            raise ConfigError(str(exc), module="cli-runner") from None
        return self

    def flow_options(self) -> flow.FlowOptions:
        return flow.FlowOptions(h=self.step, t_end=self.t_end, method=self.method,
                                record_every=self.record_every)


_TYPES = {"n": int, "perp": float, "zeta": float, "t_end": float, "step": float,
          "seed": int, "record_every": int}


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes in keys are allowed."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value", module="cli-runner")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in RunConfig.__dataclass_fields__:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}", module="cli-runner")
        out[key] = value
    return out


def build_config(args) -> RunConfig:
    values = {}
    if args.config is not None:
        values.update(read_config(args.config))
    for key in RunConfig.__dataclass_fields__:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    try:
        typed = {k: (_TYPES[k](v) if k in _TYPES else v) for k, v in values.items()}
    except ValueError as exc:
        raise ConfigError(f"bad value: {exc}", module="cli-runner") from None
    return RunConfig(**typed).validate()


def load_data(cfg: RunConfig):
    """Returns ``(dataset, sampled)``."""
    if cfg.input is not None:
        if not Path(cfg.input).is_file():
            raise FileNotFoundError(f"input file not found: {cfg.input}")
        return hi.Dataset.from_csv(cfg.input), False
    spec = geo.ManifoldSpec(cfg.manifold, seed=cfg.seed)
    return geo.sample(spec, cfg.n), True


def resolve_perp(cfg: RunConfig, n: int) -> float:
    return cfg.perp if cfg.perp is not None else hi.perp_from_zeta(cfg.zeta, n)


def svg_scatter(y: np.ndarray, size: int = 512, radius: float = 0.004) -> str:
    """Static scatter in a unit-square viewBox, fitted with a 5% margin."""
    lo, hi_ = y.min(axis=0), y.max(axis=0)
    span = float(np.max(hi_ - lo)) or 1.0
    mid = (lo + hi_) / 2.0
    u = 0.5 + 0.9 * (y - mid) / span
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 1 1">',
             '<rect width="1" height="1" fill="white"/>']
    for x, v in u:
        lines.append(f'<circle cx="{x:.6f}" cy="{1.0 - v:.6f}" r="{radius}" fill="black"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def run(cfg: RunConfig, log=print) -> int:
    data, sampled = load_data(cfg)
    if data.n < 3:
        raise ConfigError("run needs n >= 3; with n = 2 no perplexity is admissible",
                          module="cli-runner")
    perp = resolve_perp(cfg, data.n)
    cond = hi.calibrate(data, perp)
    bounds = hi.cp_bound_report(cond, data)
    p = hi.symmetrize(cond)
    trace = flow.integrate(p, flow.initial_embedding(data.n, cfg.seed), cfg.flow_options())
    config = {k: v for k, v in asdict(cfg).items() if k != "out"}
    meta = {"config": config, "n": data.n, "d": data.d, "perplexity": perp,
            "halved_steps": trace.halvings, "final_kl": trace.kl[-1],
            "affinity_bounds": asdict(bounds), "dataset": data.meta}
    report = dg.theory_report(p, trace, bounds.log_cp, meta=meta)

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if sampled:
        data.to_csv(out / "dataset.csv")
    trace.to_csv(out / "trace.csv")
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "embedding.svg").write_text(svg_scatter(trace.final_state.y))
    log(f"n={data.n} perp={perp:g} KL {trace.kl[0]:.6g} -> {trace.kl[-1]:.6g}; "
        f"artifacts in {out}")
    return 0


def verify(cfg: RunConfig, gradient=flow.kl_gradient, log=print) -> int:
    data, _ = load_data(cfg)
    perp = resolve_perp(cfg, data.n) if data.n > 2 else math.nan
    results = checks.run_all(data, perp, cfg.flow_options(), seed=cfg.seed,
                             gradient=gradient, log=log)
    failed = [r.name for r in results if not r.passed]
    log(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK if failed else 0


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tsneflow", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "verify"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key=value file; flags override it")
        sp.add_argument("--input", help="CSV of points, one per row")
        sp.add_argument("--manifold", help=f"one of {', '.join(sorted(geo.KINDS))}")
        sp.add_argument("--n", type=int)
        sp.add_argument("--perp", type=float)
        sp.add_argument("--zeta", type=float)
        sp.add_argument("--t-end", dest="t_end", type=float)
        sp.add_argument("--step", type=float)
        sp.add_argument("--method", choices=("rk4", "euler"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--record-every", dest="record_every", type=int)
        sp.add_argument("--out")
    return ap


def _fail(code, payload) -> int:
    print(json.dumps(payload, sort_keys=True, default=str), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "verify" and args.input is None and args.manifold is None \
            and args.config is None:
        args.manifold, args.n = "circle", args.n or 100
        if args.perp is None and args.zeta is None:
            args.perp = 10.0
    try:
        cfg = build_config(args)
        return run(cfg) if args.command == "run" else verify(cfg)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc.to_dict())
    except OSError as exc:
        return _fail(EXIT_IO, {"error": type(exc).__name__, "module": "cli-runner",
                               "message": str(exc)})
    except TsneFlowError as exc:
        return _fail(EXIT_MODULE, exc.to_dict())


if __name__ == "__main__":
    sys.exit(main())
