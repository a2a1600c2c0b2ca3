"""End-to-end reproductions of the four worked examples.

Each ``run_exN`` function computes the optimal designs, evaluates a table
of criteria and curvatures for reference and computed designs, and
compares the results with the values stored in ``data/reference_values.json``.
Comparisons are grouped as ``acceptance`` (the headline checks, with their
stated tolerances) and ``table`` (every remaining table entry, at 5% for
criteria and 10% for curvatures).
"""
from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, List, Optional

import numpy as np

from .criteria import (CriterionSpec, H_value, builtin_functional, classical_value,
                       evaluate_phi)
from .curvature import curvature_measures
from .cutting_plane import OptimizationReport, optimize, optimize_refined
from .design import DesignMeasure, info_matrix, merge_close_points, validate_design
from .errors import ConfigError
from .models import Box, builtin_model
from .search import DEFAULT_SEED, GridSpec

# reference designs are rounded to 4-5 significant digits, so singular
# c-optimal designs only approximately contain c in the range of M
ROUNDED_ESTIMABILITY_TOL = 1e-4
CRITERION_TOL = 0.05
CURVATURE_TOL = 0.10
ZERO_TOL = 1e-6


@dataclass
class Check:
    name: str
    computed: float
    reference: float
    tol: float
    mode: str = "rel"
    group: str = "table"
    note: str = ""

    @property
    def passed(self) -> bool:
        c, r = self.computed, self.reference
        if c is None or not np.isfinite(c):
            return False
        if self.mode == "max":
            return c <= self.tol
        if self.mode == "rel":
            return abs(c - r) <= self.tol * abs(r)
        return abs(c - r) <= self.tol

    def to_dict(self) -> dict:
        return {"group": self.group, "name": self.name, "computed": self.computed,
                "reference": self.reference, "tol": self.tol, "mode": self.mode,
                "passed": self.passed, "note": self.note}


@dataclass
class ExampleRun:
    example: str
    checks: List[Check] = field(default_factory=list)
    tables: Dict[str, List[dict]] = field(default_factory=dict)
    designs: Dict[str, DesignMeasure] = field(default_factory=dict)
    reports: Dict[str, OptimizationReport] = field(default_factory=dict)
    timing: float = 0.0

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.reports.values())

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def acceptance(self) -> List[Check]:
        return [c for c in self.checks if c.group == "acceptance"]

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "designs.json"), "w") as fh:
            json.dump({k: v.to_dict() for k, v in self.designs.items()}, fh, indent=1)
        for name, rows in self.tables.items():
            _write_table(os.path.join(out_dir, f"{name}.csv"), rows)
            with open(os.path.join(out_dir, f"{name}.json"), "w") as fh:
                json.dump(rows, fh, indent=1)
        _write_table(os.path.join(out_dir, "comparison.csv"), [c.to_dict() for c in self.checks])
        for name, rep in self.reports.items():
            with open(os.path.join(out_dir, f"report_{name}.json"), "w") as fh:
                fh.write(rep.to_json(indent=1))
            with open(os.path.join(out_dir, f"gap_history_{name}.csv"), "w") as fh:
                fh.write(rep.gap_history_csv())

    def summary(self) -> str:
        lines = [f"{self.example}: {sum(c.passed for c in self.checks)}/{len(self.checks)} checks passed"
                 f" in {self.timing:.1f} s"]
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"  [{flag}] {c.group:10s} {c.name}: computed {c.computed:.6g}"
                         f" reference {c.reference:.6g} ({c.mode} tol {c.tol:g})")
        return "\n".join(lines)


def _write_table(path: str, rows: List[dict]) -> None:
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def reference_values() -> dict:
    text = resources.files("extdesign").joinpath("data/reference_values.json").read_text()
    return json.loads(text)


def _design(entry: dict) -> DesignMeasure:
    return validate_design(entry["support"], entry["weights"], renormalize=True)


def _box(bounds) -> Box:
    b = np.asarray(bounds, dtype=float)
    return Box(b[:, 0], b[:, 1])


def range_points(start: float, step: float, stop: float) -> np.ndarray:
    """Inclusive arithmetic range, robust to floating-point step accumulation."""
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return np.round(start + step * np.arange(n), 12)


def _det_1_3(model, xi, theta0) -> float:
    # the tables report det(M)^(1/3) in every example, also when p = 2
    return float(max(np.linalg.det(info_matrix(model, xi, theta0)), 0.0) ** (1.0 / 3.0))


def design_match_checks(prefix: str, computed: DesignMeasure, reference: DesignMeasure,
                        loc_tol: float, loc_mode: str, w_tol: float,
                        group: str = "acceptance") -> List[Check]:
    """Support-size, location and weight checks of ``computed`` against ``reference``."""
    checks = [Check(f"{prefix} support size", computed.size, reference.size, 0, "abs", group)]
    for r, wr in zip(reference.support, reference.weights):
        dist = np.linalg.norm(computed.support - r, axis=1)
        k = int(np.argmin(dist))
        label = ",".join(f"{v:g}" for v in r)
        if loc_mode == "rel":
            checks.append(Check(f"{prefix} support near {label}", float(computed.support[k][0])
                                if computed.dim == 1 else float(dist[k]),
                                float(r[0]) if computed.dim == 1 else 0.0, loc_tol,
                                "rel" if computed.dim == 1 else "abs", group))
        else:
            checks.append(Check(f"{prefix} support near {label}", float(dist[k]), 0.0, loc_tol, "abs", group))
        wk = float(computed.weights[k]) if dist[k] <= max(loc_tol * (np.linalg.norm(r) if loc_mode == "rel" else 1.0),
                                                          1e-12) else 0.0
        checks.append(Check(f"{prefix} weight at {label}", wk, float(wr), w_tol, "abs", group))
    return checks


def table_checks(name: str, columns: List[str], computed: dict, reference: List[Optional[float]],
                 group: str = "table") -> List[Check]:
    out = []
    for col, ref in zip(columns, reference):
        if ref is None or col not in computed:
            continue
        val = computed[col]
        tol = CURVATURE_TOL if col.startswith("C_") else CRITERION_TOL
        if ref == 0:
            out.append(Check(f"{name} {col}", val, 0.0, ZERO_TOL, "max", group))
        else:
            out.append(Check(f"{name} {col}", val, ref, tol, "rel", group))
    return out


def _curvature_row(model, xi, theta0) -> dict:
    rep = curvature_measures(model, xi, theta0)
    return {"C_par": rep.C_par, "C_int": rep.C_int, "C_tot": rep.C_tot}


# --- example 1 -----------------------------------------------------------------

def run_ex1(seed: int = DEFAULT_SEED, threads: int = 1) -> ExampleRun:
    start = time.perf_counter()
    ref = reference_values()["ex1"]
    model = builtin_model("circle", r=1.0)
    spec = CriterionSpec("eE", theta0=[0.0])
    box = Box([0.0], [1.0])
    grid = GridSpec("full_grid", 1001, seed)
    run = ExampleRun("ex1")
    rows = []
    for u in np.arange(0.0, 7 * np.pi / 4, 0.01):
        xi = validate_design([[0.0, u], [np.pi / 2, u]], [0.5, 0.5])
        val = evaluate_phi(spec, model, xi, box, grid, n_starts=1)
        rows.append({"u": float(u), "H_E_at_1": H_value(spec, model, xi, [1.0]),
                     "phi_eE": val.value, "argmin_theta": float(val.argmin_theta[0])})
    run.tables["sweep"] = rows
    best = max(rows, key=lambda r: r["phi_eE"])
    xi_pi = validate_design([[0.0, np.pi], [np.pi / 2, np.pi]], [0.5, 0.5])
    at_pi = evaluate_phi(spec, model, xi_pi, box, grid, n_starts=1)
    run.designs["nu_pi"] = xi_pi
    run.timing = time.perf_counter() - start
    run.checks += [
        Check("argmax u of phi_eE(nu_u)", best["u"], ref["u_star"]["value"], ref["u_star"]["tol"], "abs", "acceptance"),
        Check("phi_eE(nu_pi)", at_pi.value, 2.0, ref["phi_at_pi"]["tol"], "abs", "acceptance"),
        Check("argmin theta at u = pi", float(at_pi.argmin_theta[0]), 1.0, 1e-6, "abs", "acceptance"),
        Check("runtime seconds", run.timing, 0.0, 5.0, "max", "acceptance"),
    ]
    return run


# --- example 2 -----------------------------------------------------------------

def _ex2_row(model, xi, theta0, box, X, grid) -> dict:
    eE = evaluate_phi(CriterionSpec("eE", theta0=theta0), model, xi, box, grid)
    eG = evaluate_phi(CriterionSpec("eG", theta0=theta0, design_space=X), model, xi, box, grid)
    row = {"det_1_3": _det_1_3(model, xi, theta0),
           "lambda_min": classical_value("E", model, xi, theta0),
           "phi_eE": eE.value, "phi_eG": eG.value}
    row.update(_curvature_row(model, xi, theta0))
    return row, eE, eG


def run_ex2(seed: int = DEFAULT_SEED, threads: int = 1) -> ExampleRun:
    start = time.perf_counter()
    ref = reference_values()["ex2"]
    model = builtin_model("bilinear2d")
    theta0 = np.array(ref["theta0"])
    box = _box(ref["theta_box"])
    X = np.array(ref["design_space"], dtype=float)
    grid = GridSpec("latin_hypercube", 10_000, seed)
    run = ExampleRun("ex2")
    t_opt = time.perf_counter()
    for kind in ("eE", "eG"):
        rep = optimize(CriterionSpec(kind, theta0=theta0), model, X, box, grid=grid, threads=threads)
        run.reports[kind] = rep
        run.designs[f"{kind}_computed"] = rep.design
    opt_time = time.perf_counter() - t_opt
    reference = {k: _design(v) for k, v in ref["designs"].items()}
    run.designs.update({f"{k}_reference": v for k, v in reference.items()})

    cols = ref["table"]["columns"]
    rows, extras = [], {}
    for name, xi in list(reference.items()) + [("eE_computed", run.designs["eE_computed"]),
                                                ("eG_computed", run.designs["eG_computed"])]:
        row, eE, eG = _ex2_row(model, xi, theta0, box, X, grid)
        extras[name] = (eE, eG)
        rows.append({"design": name, **row})
        if name in ref["table"]["rows"]:
            run.checks += table_checks(name, cols, row, ref["table"]["rows"][name])
    run.tables["criteria"] = rows

    eE_rep, eG_rep = run.reports["eE"], run.reports["eG"]
    run.checks += [Check("phi_eE(xi_eE*)", eE_rep.value, 8.78e-3, 0.05, "rel", "acceptance")]
    run.checks += design_match_checks("xi_eE*", eE_rep.design, reference["eE"], 0.0, "abs", 0.02)
    run.checks += [Check("phi_eG(xi_eG*)", eG_rep.value, 0.340, 0.05, "rel", "acceptance")]
    run.checks += design_match_checks("xi_eG*", eG_rep.design, reference["eG"], 0.0, "abs", 0.02)
    run.checks += [Check("optimization runtime seconds", opt_time, 0.0, 60.0, "max", "acceptance")]

    eE_E, eG_E = extras["E"]
    overlap = np.array(ref["overlap_point"]["value"])
    run.checks += [
        Check("phi_eE(xi_E)", eE_E.value, 0.0, 1e-6, "max", "acceptance"),
        Check("phi_eG(xi_E)", eG_E.value, 0.0, 1e-6, "max", "acceptance"),
        Check("distance of eE minimiser at xi_E to the overlap point",
              float(np.linalg.norm(eE_E.argmin_theta - overlap)), 0.0, 1e-3, "abs", "acceptance"),
    ]
    by_name = {r["design"]: r for r in rows}
    for name in ("D", "E", "eE", "eG"):
        refrow = dict(zip(cols, ref["table"]["rows"][name]))
        for col in ("C_par", "C_int", "C_tot"):
            if refrow[col] == 0:
                run.checks.append(Check(f"curvature {name} {col}", by_name[name][col], 0.0, 1e-6, "max", "acceptance"))
            else:
                run.checks.append(Check(f"curvature {name} {col}", by_name[name][col], refrow[col],
                                        CURVATURE_TOL, "rel", "acceptance"))
    run.timing = time.perf_counter() - start
    return run


# --- example 3 -----------------------------------------------------------------

FUNCTIONALS = {"1": "auc", "2": "tmax", "3": "cmax"}


def run_ex3(seed: int = DEFAULT_SEED, threads: int = 1) -> ExampleRun:
    start = time.perf_counter()
    ref = reference_values()["ex3"]
    model = builtin_model("pk1")
    theta0 = np.array(ref["theta0"])
    box = _box(ref["theta_box"])
    grid = GridSpec("latin_hypercube", 10_000, seed)
    run = ExampleRun("ex3")
    reference = {k: _design(v) for k, v in ref["designs"].items()}
    run.designs.update({f"{k}_reference": v for k, v in reference.items()})

    X = range_points(0.2, 0.2, 24.0)
    w0 = np.zeros(len(X))
    for v in ref["initial_support"]:
        w0[int(np.argmin(np.abs(X - v)))] = 1.0 / len(ref["initial_support"])
    t_opt = time.perf_counter()
    spec_eE = CriterionSpec("eE", theta0=theta0)
    rep = optimize_refined(spec_eE, model, X, box, grid=grid, w0=w0, threads=threads)
    run.reports["eE"] = rep
    run.designs["eE_computed"] = rep.design
    functionals = {i: builtin_functional("pk1", g) for i, g in FUNCTIONALS.items()}
    for i, g in functionals.items():
        support = np.unique(np.concatenate([reference["D"].support[:, 0], reference["E"].support[:, 0],
                                            reference[f"c{i}"].support[:, 0]]))
        rep_c = optimize(CriterionSpec("ec", theta0=theta0, functional=g), model, support, box,
                         grid=grid, threads=threads)
        run.reports[f"ec{i}"] = rep_c
        run.designs[f"ec{i}_computed"] = rep_c.design
    opt_time = time.perf_counter() - t_opt

    cols = ref["table"]["columns"]
    rows = []
    names = list(reference) + ["eE_computed", "ec1_computed", "ec2_computed", "ec3_computed"]
    for name in names:
        xi = reference[name] if name in reference else run.designs[name]
        row = {"design": name, "det_1_3": _det_1_3(model, xi, theta0),
               "lambda_min": classical_value("E", model, xi, theta0),
               "phi_eE": evaluate_phi(spec_eE, model, xi, box, grid).value}
        for i, g in functionals.items():
            row[f"phi_c{i}"] = classical_value("c", model, xi, theta0, g,
                                               estimability_tol=ROUNDED_ESTIMABILITY_TOL)
            row[f"phi_ec{i}"] = evaluate_phi(CriterionSpec("ec", theta0=theta0, functional=g),
                                             model, xi, box, grid).value
        row.update(_curvature_row(model, xi, theta0))
        rows.append(row)
        if name in ref["table"]["rows"]:
            run.checks += table_checks(name, cols, row, ref["table"]["rows"][name])
    run.tables["criteria"] = rows
    by_name = {r["design"]: r for r in rows}

    merged = merge_close_points(rep.design, rtol=0.01)
    run.checks += [Check("phi_eE(xi_eE*)", rep.value, 0.281, 0.02, "rel", "acceptance")]
    run.checks += design_match_checks("xi_eE*", merged, reference["eE"], 0.02, "rel", 0.02)
    run.checks += [
        Check("phi_eE(xi_D)", by_name["D"]["phi_eE"], 0.178, 0.05, "rel", "acceptance"),
        Check("lambda_min(xi_E)", by_name["E"]["lambda_min"], 0.316, 0.02, "rel", "acceptance"),
        Check("phi_ec3(xi_ec3*)", run.reports["ec3"].value, 0.865, 0.05, "rel", "acceptance"),
        Check("phi_ec1(xi_ec1*)", run.reports["ec1"].value, 2.17e-4, 0.05, "rel", "acceptance"),
        Check("optimization runtime seconds", opt_time, 0.0, 300.0, "max", "acceptance"),
    ]
    # classical c values at the singular c-optimal designs, for the other functionals
    for i in FUNCTIONALS:
        for j, g in functionals.items():
            if i != j:
                val = classical_value("c", model, reference[f"c{i}"], theta0, g)
                run.checks.append(Check(f"phi_c{j}(xi_c{i}) is zero", val, 0.0, 0.0, "max", "acceptance"))
    run.checks.append(Check("C_par(xi_D)", by_name["D"]["C_par"], 0.526, CURVATURE_TOL, "rel", "acceptance"))
    run.checks.append(Check("C_int(xi_D)", by_name["D"]["C_int"], 0.0, 1e-6, "max", "acceptance"))
    run.timing = time.perf_counter() - start
    return run


# --- example 4 -----------------------------------------------------------------

def run_ex4(seed: int = DEFAULT_SEED, threads: int = 1) -> ExampleRun:
    start = time.perf_counter()
    ref = reference_values()["ex4"]
    model = builtin_model("pk1")
    theta0 = np.array(ref["theta0"])
    box = _box(ref["theta_box"])
    ds = ref["design_space"]
    X = range_points(ds["start"], ds["step"], ds["stop"])
    run = ExampleRun("ex4")
    reference = {k: _design(v) for k, v in ref["designs"].items()}
    run.designs.update({f"{k}_reference": v for k, v in reference.items()})

    t_opt = time.perf_counter()
    spec_eE = CriterionSpec("eE", theta0=theta0)
    spec_eG = CriterionSpec("eG", theta0=theta0, design_space=X[:, None])
    rep_eE = optimize_refined(spec_eE, model, X, box, grid=GridSpec("latin_hypercube", 10_000, seed),
                              threads=threads)
    rep_eG = optimize(spec_eG, model, X, box, grid=GridSpec("latin_hypercube", 100_000, seed),
                      threads=threads)
    opt_time = time.perf_counter() - t_opt
    run.reports["eE"], run.reports["eG"] = rep_eE, rep_eG
    run.designs["eE_computed"], run.designs["eG_computed"] = rep_eE.design, rep_eG.design

    # the xi_0 minimiser sits in a narrow valley that a 10,000 point grid can miss
    grid = GridSpec("latin_hypercube", 100_000, seed)
    cols = ref["table"]["columns"]
    rows = []
    for name in list(reference) + ["eE_computed", "eG_computed"]:
        xi = reference[name] if name in reference else run.designs[name]
        row = {"design": name, "det_1_3": _det_1_3(model, xi, theta0),
               "lambda_min": classical_value("E", model, xi, theta0),
               "phi_eE": evaluate_phi(spec_eE, model, xi, box, grid).value,
               "phi_eG": evaluate_phi(spec_eG, model, xi, box, grid).value}
        row.update(_curvature_row(model, xi, theta0))
        rows.append(row)
        if name in ref["table"]["rows"]:
            run.checks += table_checks(name, cols, row, ref["table"]["rows"][name])
    run.tables["criteria"] = rows
    by_name = {r["design"]: r for r in rows}

    eE_merged = merge_close_points(rep_eE.design, atol=0.1 + 1e-9)
    eG_merged = merge_close_points(rep_eG.design, atol=0.1 + 1e-9)
    run.checks += [Check("phi_eE(xi_eE*)", rep_eE.value, 2.92e-4, 0.05, "rel", "acceptance")]
    run.checks += [c for c in design_match_checks("xi_eE*", eE_merged, reference["eE"], 0.1, "abs", 1.0)
                   if "weight" not in c.name]
    run.checks += [Check("phi_eG(xi_eG*)", rep_eG.value, 0.244, 0.05, "rel", "acceptance")]
    run.checks += design_match_checks("xi_eG*", eG_merged, reference["eG"], 0.1, "abs", 0.02)
    run.checks += [
        Check("phi_eE(xi_0)", by_name["xi0"]["phi_eE"], 2.28e-5, 0.10, "rel", "acceptance"),
        Check("phi_eG(xi_0)", by_name["xi0"]["phi_eG"], 5.66e-3, 0.10, "rel", "acceptance"),
        Check("C_tot(xi_0)", by_name["xi0"]["C_tot"], 181.3, CURVATURE_TOL, "rel", "acceptance"),
        Check("optimization runtime seconds", opt_time, 0.0, 300.0, "max", "acceptance"),
    ]
    run.timing = time.perf_counter() - start
    return run


RUNNERS = {"ex1": run_ex1, "ex2": run_ex2, "ex3": run_ex3, "ex4": run_ex4}

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_MISMATCH = 3


def reproduce(example_id: str, out_dir: str, seed: int = DEFAULT_SEED, threads: int = 1,
              verbose: bool = False) -> int:
    """Run one example, write its artifacts under ``out_dir`` and return an exit code.

    The code is 0 when every comparison passes, 2 when an optimisation did
    not converge and 3 when some computed value is outside its tolerance.
    """
    if example_id not in RUNNERS:
        raise ConfigError(f"unknown example {example_id!r}; choose from {sorted(RUNNERS)}")
    run = RUNNERS[example_id](seed=seed, threads=threads)
    run.write(out_dir)
    if verbose:
        print(run.summary())
    if not run.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK if run.passed else EXIT_MISMATCH
