"""Command-line interface.

Subcommands ``optimize``, ``evaluate``, ``certify``, ``curvature``,
``simulate``, ``fit`` and ``reproduce``.  Settings come from an optional JSON
file (``--config``) with command-line flags taking precedence.  Exit codes:
0 success, 1 configuration error, 2 numeric or convergence failure, 3 a
reproduction whose results fall outside the reference tolerances.
"""
from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np

from .criteria import (CLASSICAL, DEFAULT_POLISHES, CriterionSpec, active_set, builtin_functional, classical_value,
                       evaluate_phi, optimality_certificate)
from .curvature import curvature_measures
from .cutting_plane import optimize, optimize_refined
from .design import DesignMeasure, format_design, load_design
from .errors import ConfigError, DesignError, ExtDesignError, ModelError, RegistryError
from .estimation import (ObservationSet, ls_fit_multistart, replicate_design,
                         simulate_observations)
from .examples import RUNNERS, range_points, reproduce
from .models import Box, FiniteSet, builtin_model
from .search import DEFAULT_SEED, GridSpec

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


@dataclass
class RunConfig:
    """Everything a subcommand needs; unknown keys are rejected when loading."""

    model: str = "bilinear2d"
    model_params: dict = field(default_factory=dict)
    criterion: str = "eE"
    theta0: Optional[List[float]] = None
    K: float = 0.0
    worst_case: bool = False
    functional: Optional[str] = None
    theta_box: Optional[List[List[float]]] = None
    theta_points: Optional[List[List[float]]] = None
    xspace: object = None
    eps: float = 1e-10
    seed: int = DEFAULT_SEED
    grid_n: int = 10_000
    grid_kind: str = "latin_hypercube"
    max_iter: int = 500
    rounds: int = 0
    n_starts: int = DEFAULT_POLISHES
    threads: int = 1
    design: Optional[str] = None
    out: Optional[str] = None
    sigma: float = 0.0
    theta_bar: Optional[List[float]] = None
    counts: Optional[List[int]] = None
    observations: Optional[str] = None
    fit_starts: int = 50

    @classmethod
    def keys(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, data: dict, source: str = "<config>", text: Optional[str] = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"{source}:1: top level must be a JSON object")
        allowed = set(cls.keys())
        for key in data:
            if key not in allowed:
                raise ConfigError(f"{source}:{_line_of(text, key)}: unknown key {key!r}")
        return cls(**data)

    # derived inputs ---------------------------------------------------------
    def build_model(self):
        return builtin_model(self.model, **self.model_params)

    def build_spec(self, X: Optional[np.ndarray] = None) -> CriterionSpec:
        g = builtin_functional(self.model, self.functional) if self.functional else None
        theta0 = None if self.worst_case else _require(self.theta0, "theta0")
        design_space = X if self.criterion in ("eG", "G") else None
        return CriterionSpec(self.criterion, theta0=theta0, K=float(self.K), worst_case=self.worst_case,
                             functional=g, design_space=design_space)

    def build_domain(self):
        if self.theta_points is not None:
            return FiniteSet(np.asarray(self.theta_points, dtype=float))
        box = np.asarray(_require(self.theta_box, "theta_box"), dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ConfigError("theta_box must list one [lower, upper] pair per parameter")
        return Box(box[:, 0], box[:, 1])

    def build_xspace(self) -> np.ndarray:
        return parse_xspace(_require(self.xspace, "xspace"))

    def build_grid(self) -> GridSpec:
        return GridSpec(self.grid_kind, int(self.grid_n), int(self.seed))


def _require(value, name):
    if value is None:
        raise ConfigError(f"missing required setting {name!r}")
    return value


def _line_of(text: Optional[str], key: str) -> int:
    if text:
        for k, line in enumerate(text.splitlines(), start=1):
            if f'"{key}"' in line:
                return k
    return 1


def parse_xspace(spec) -> np.ndarray:
    """Design space from ``"a:step:b"`` (inclusive), ``"x1,x2;x3,x4"`` or a nested list."""
    if isinstance(spec, str):
        s = spec.strip()
        if re.fullmatch(r"[^;,]+:[^;,]+:[^;,]+", s):
            try:
                a, step, b = (float(v) for v in s.split(":"))
            except ValueError:
                raise ConfigError(f"bad range {spec!r}; expected a:step:b") from None
            if not step > 0 or b < a:
                raise ConfigError(f"bad range {spec!r}; need step > 0 and b >= a")
            return range_points(a, step, b)[:, None]
        try:
            pts = [[float(v) for v in row.split(",")] for row in s.split(";") if row.strip()]
        except ValueError:
            raise ConfigError(f"bad design space {spec!r}") from None
        spec = pts
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.size == 0:
        raise ConfigError("design space must be a nonempty list of points")
    return arr


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


def _box_arg(text: str) -> List[List[float]]:
    try:
        return [[float(v) for v in part.split(":")] for part in text.split(",")]
    except ValueError:
        raise ConfigError(f"expected lo:hi,lo:hi,..., got {text!r}") from None


def _points_arg(text: str) -> List[List[float]]:
    return [_floats(row) for row in text.split(";") if row.strip()]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"command line: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with settings; flags override it")
    p.add_argument("--model", help="built-in model: circle, bilinear2d, pk1")
    p.add_argument("--r", type=float, help="radius of the circle model")
    p.add_argument("--criterion", help="eE, ec, eG (extended) or E, c, D, G (classical)")
    p.add_argument("--theta0", type=_floats, help="nominal parameter, comma separated")
    p.add_argument("--theta-box", dest="theta_box", type=_box_arg,
                   help="parameter box lo:hi,lo:hi (write --theta-box=... when it starts with '-')")
    p.add_argument("--theta-points", dest="theta_points", type=_points_arg,
                   help="finite parameter set a,b;c,d")
    p.add_argument("--xspace", help="design space a:step:b or x1,x2;x3,x4")
    p.add_argument("--k", dest="K", type=float, help="saturation constant K >= 0")
    p.add_argument("--worst-case", dest="worst_case", action="store_const", const=True,
                   help="minimise over theta0 as well")
    p.add_argument("--functional", help="named scalar functional for c criteria (pk1: auc, tmax, cmax)")
    p.add_argument("--eps", type=float, help="duality-gap tolerance")
    p.add_argument("--seed", type=int, help="seed of the parameter grid and simulations")
    p.add_argument("--grid-n", dest="grid_n", type=int, help="number of grid points in the parameter box")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="width of the parallel map")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="extdesign", description="Extended optimal designs for nonlinear regression.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", help="compute an extended optimal design")
    _common(p)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--rounds", type=int, help="design-space refinement rounds after the first solve")
    p.add_argument("--n-starts", dest="n_starts", type=int, help="local polishes per inner search")

    for name, text in (("evaluate", "criterion value of a design"),
                       ("certify", "equivalence-theorem certificate of a design"),
                       ("curvature", "parametric, intrinsic and total curvature of a design")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--design", help="design JSON with keys support and weights")

    p = sub.add_parser("simulate", help="simulate observations at a design")
    _common(p)
    p.add_argument("--design", help="design JSON; its support is replicated by --counts")
    p.add_argument("--counts", type=lambda s: [int(v) for v in s.split(",")])
    p.add_argument("--sigma", type=float)
    p.add_argument("--theta-bar", dest="theta_bar", type=_floats, help="true parameter (default theta0)")

    p = sub.add_parser("fit", help="multistart least squares")
    _common(p)
    p.add_argument("--observations", help="observation JSON or CSV file")
    p.add_argument("--fit-starts", dest="fit_starts", type=int)

    p = sub.add_parser("reproduce", help="reproduce a worked example")
    p.add_argument("example", choices=sorted(RUNNERS))
    p.add_argument("--out", default="reproduce_out")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--threads", type=int, default=1)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    if getattr(args, "config", None):
        path = args.config
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}:0: cannot read config ({exc.strerror})") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
        RunConfig.from_dict(data, path, text)
    overrides = {k: v for k, v in vars(args).items()
                 if k in RunConfig.keys() and v is not None}
    if getattr(args, "r", None) is not None:
        overrides["model_params"] = dict(data.get("model_params", {}), r=args.r)
    data.update(overrides)
    return RunConfig.from_dict(data)


def _design_arg(cfg: RunConfig) -> DesignMeasure:
    path = _require(cfg.design, "design")
    try:
        return load_design(path)
    except OSError as exc:
        raise ConfigError(f"{path}:0: cannot read design ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _write(cfg: RunConfig, name: str, text: str) -> Optional[str]:
    if not cfg.out:
        return None
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def cmd_optimize(cfg: RunConfig) -> int:
    model = cfg.build_model()
    X = cfg.build_xspace()
    spec = cfg.build_spec(X)
    kw = dict(eps=cfg.eps, grid=cfg.build_grid(), max_iter=cfg.max_iter, threads=cfg.threads,
              n_starts=cfg.n_starts)
    if cfg.rounds > 0:
        report = optimize_refined(spec, model, X, cfg.build_domain(), rounds=cfg.rounds, **kw)
    else:
        report = optimize(spec, model, X, cfg.build_domain(), **kw)
    print(format_design(report.design))
    print(f"phi_{spec.kind} = {report.value:.10g}  (upper bound {report.upper_bound:.10g},"
          f" {report.iterations} iterations, converged: {report.converged})")
    if report.certificate is not None:
        print(f"certificate = {report.certificate:.3g}")
    _write(cfg, "report.json", report.to_json(indent=1))
    _write(cfg, "design.json", report.design.to_json())
    _write(cfg, "gap_history.csv", report.gap_history_csv())
    return EXIT_OK if report.converged else EXIT_NUMERIC


def _value(cfg: RunConfig, model, xi: DesignMeasure, X: Optional[np.ndarray]):
    spec = cfg.build_spec(X if X is not None else xi.support)
    if spec.kind in CLASSICAL:
        return spec, classical_value(spec.kind, model, xi, spec.theta0, spec.functional,
                                     spec.design_space), None
    res = evaluate_phi(spec, model, xi, cfg.build_domain(), cfg.build_grid())
    return spec, res.value, res


def cmd_evaluate(cfg: RunConfig) -> int:
    model = cfg.build_model()
    xi = _design_arg(cfg)
    X = cfg.build_xspace() if cfg.xspace is not None else None
    spec, value, res = _value(cfg, model, xi, X)
    print(f"phi_{spec.kind} = {value:.10g}")
    out = {"criterion": spec.kind, "value": value, "design": xi.to_dict()}
    if res is not None:
        print(f"argmin theta = {np.array2string(res.argmin_theta, precision=6)}")
        out["argmin"] = res.argmin.to_dict()
        out["near_boundary"] = bool(res.near_boundary_flag)
    _write(cfg, "evaluate.json", json.dumps(out, indent=1))
    return EXIT_OK


def cmd_certify(cfg: RunConfig) -> int:
    model = cfg.build_model()
    xi = _design_arg(cfg)
    X = cfg.build_xspace() if cfg.xspace is not None else xi.support
    spec, value, res = _value(cfg, model, xi, X)
    if res is None:
        raise ConfigError("certificates are available for extended criteria only")
    active = active_set(res)
    cert = optimality_certificate(spec, model, xi, X, active)
    print(f"phi_{spec.kind} = {value:.10g}")
    print(f"certificate = {cert:.6g}  ({len(active.points)} active parameters)")
    _write(cfg, "certificate.json", json.dumps(
        {"criterion": spec.kind, "value": value, "certificate": cert,
         "active": [c.to_dict() for c in active.points]}, indent=1))
    return EXIT_OK


def cmd_curvature(cfg: RunConfig) -> int:
    model = cfg.build_model()
    xi = _design_arg(cfg)
    theta = _require(cfg.theta0, "theta0")
    rep = curvature_measures(model, xi, theta, seed=cfg.seed)
    print(f"C_par = {rep.C_par:.6g}  C_int = {rep.C_int:.6g}  C_tot = {rep.C_tot:.6g}")
    _write(cfg, "curvature.json", json.dumps(rep.to_dict(), indent=1))
    _write(cfg, "curvature.csv", f"C_par,C_int,C_tot\n{rep.C_par!r},{rep.C_int!r},{rep.C_tot!r}\n")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    model = cfg.build_model()
    if cfg.design is not None:
        xi = _design_arg(cfg)
        counts = cfg.counts if cfg.counts is not None else [1] * xi.size
        X = replicate_design(xi, counts)
    else:
        X = cfg.build_xspace()
    theta_bar = cfg.theta_bar if cfg.theta_bar is not None else _require(cfg.theta0, "theta0")
    obs = simulate_observations(model, X, theta_bar, cfg.sigma, cfg.seed)
    if not _write(cfg, "observations.json", obs.to_json()):
        print(obs.to_json())
    _write(cfg, "observations.csv", obs.to_csv())
    return EXIT_OK


def _load_observations(path: str) -> ObservationSet:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}:0: cannot read observations ({exc.strerror})") from None
    if path.endswith(".csv"):
        return ObservationSet.from_csv(text)
    try:
        return ObservationSet.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def cmd_fit(cfg: RunConfig) -> int:
    model = cfg.build_model()
    obs = _load_observations(_require(cfg.observations, "observations"))
    domain = cfg.build_domain()
    if not isinstance(domain, Box):
        raise ConfigError("fitting needs a parameter box")
    fit = ls_fit_multistart(model, obs, domain, n_starts=cfg.fit_starts, seed=cfg.seed, threads=cfg.threads)
    print(f"theta_hat = {np.array2string(fit.theta_hat, precision=8)}  residual norm {fit.residual_norm:.6g}")
    for theta, r in fit.local_minima[1:]:
        print(f"  other local minimum {np.array2string(theta, precision=6)}  residual norm {r:.6g}")
    _write(cfg, "fit.json", json.dumps(fit.to_dict(), indent=1))
    return EXIT_OK


COMMANDS = {"optimize": cmd_optimize, "evaluate": cmd_evaluate, "certify": cmd_certify,
            "curvature": cmd_curvature, "simulate": cmd_simulate, "fit": cmd_fit}


def run(config: RunConfig, command: str) -> int:
    """Execute ``command`` with a loaded configuration and return the exit code."""
    try:
        return COMMANDS[command](config)
    except (ConfigError, RegistryError, ModelError, DesignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExtDesignError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "reproduce":
            return reproduce(args.example, args.out, seed=args.seed, threads=args.threads, verbose=True)
        cfg = load_config(args)
    except (ConfigError, RegistryError, ModelError, DesignError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.command)


if __name__ == "__main__":
    sys.exit(main())
