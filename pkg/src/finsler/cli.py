"""Scenario runner: ``finsler <task> --config scenario.json [--out PATH] [--format json|csv]``.

Exit codes: 0 when every verification task passes, 1 when a verification
fails (or a task errors), 2 for configuration and schema errors.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import connections as conn
from . import curvature as curv
from . import dynamics as dyn
from .errors import ConeExit, ConeViolation, DegenerateFlag, DegenerateMetric, DomainError, ParseError
from .expr import Expression
from .metrics import MetricSpec, fundamental_tensor, metric_from_config, spray_coefficients

TASKS = ("info", "curvature", "geodesic", "transport", "jacobi", "variation", "verify", "compare")
VERIFICATION_TASKS = ("verify", "compare")
MAX_ATTEMPTS = 10_000

DEFAULT_TOLERANCES = {
    "bianchi": 1e-7,
    "metric": 1e-9,
    "symmetry": 1e-7,
    "torsion": 1e-12,
    "roftilder": 1e-7,
    "flagpole": 1e-8,
    "q_uv": 1e-8,
}


class ConfigError(Exception):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


# config -------------------------------------------------------------------------

def load_schema() -> dict:
    return json.loads(resources.files("finsler").joinpath("scenario.json").read_text())


def _field_path(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as err:
        raise ConfigError("<file>", f"cannot read {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise ConfigError("<root>", f"invalid JSON: {err}") from None
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ConfigError(_field_path(err.absolute_path), err.message)
    return cfg


@dataclass
class Sample:
    x: np.ndarray
    v: np.ndarray
    w: np.ndarray | None

    def to_dict(self) -> dict:
        out = {"x": self.x.tolist(), "v": self.v.tolist()}
        if self.w is not None:
            out["w"] = self.w.tolist()
        return out


@dataclass
class Scenario:
    metric: MetricSpec
    connections: dict
    samples: list
    tasks: list
    tolerances: dict
    output: dict


def _vector(value, n: int, where: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n,):
        raise ConfigError(where, f"expected {n} components, got {len(value)}")
    return arr


def _box(spec, n, where, default):
    if spec is None:
        return np.array([default] * n, dtype=float)
    arr = np.asarray(spec, dtype=float)
    if arr.shape != (n, 2):
        raise ConfigError(where, f"expected {n} intervals")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise ConfigError(where, "interval bounds are reversed")
    return arr


def draw_samples(metric: MetricSpec, seed: int, count: int, box=None) -> list:
    """Uniform samples in a coordinate box, rejected against the cone."""
    n = metric.dim
    box = box or {}
    xb = _box(box.get("x"), n, "samples.random.box.x", (-0.5, 0.5))
    vb = _box(box.get("v"), n, "samples.random.box.v", (-1.0, 1.0))
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        for _ in range(MAX_ATTEMPTS):
            x = rng.uniform(xb[:, 0], xb[:, 1])
            v = rng.uniform(vb[:, 0], vb[:, 1])
            if metric.in_cone(x, v):
                break
        else:
            raise ConfigError("samples.random", f"no admissible sample {k} after {MAX_ATTEMPTS} attempts")
        w = rng.uniform(vb[:, 0], vb[:, 1])
        out.append(Sample(x, v, w))
    return out


def build_scenario(cfg: dict) -> Scenario:
    try:
        metric = metric_from_config(cfg["metric"])
    except ParseError as err:
        raise ConfigError("metric.expression", str(err)) from None
    except (TypeError, ValueError, KeyError) as err:
        raise ConfigError("metric.params", str(err)) from None
    n = metric.dim

    connections = {}
    for i, spec in enumerate(cfg.get("connections") or [{"kind": "chern"}]):
        name = spec.get("name", spec["kind"] if spec["kind"] != "distinguished" else f"distinguished{i}")
        if name in connections:
            raise ConfigError(f"connections[{i}].name", f"duplicate connection name {name!r}")
        for key in ("f", "h"):
            if isinstance(spec.get(key), str):
                try:
                    Expression(spec[key], n, {})
                except ParseError as err:
                    raise ConfigError(f"connections[{i}].{key}", str(err)) from None
        connections[name] = conn.connection_from_config(metric, spec)

    samples = []
    sspec = cfg.get("samples", {})
    for i, pt in enumerate(sspec.get("points", [])):
        where = f"samples.points[{i}]"
        x = _vector(pt["x"], n, where + ".x")
        v = _vector(pt["v"], n, where + ".v")
        w = _vector(pt["w"], n, where + ".w") if "w" in pt else None
        if not metric.in_cone(x, v):
            raise ConfigError(where + ".v", "direction outside the admissible cone")
        samples.append(Sample(x, v, w))
    if "random" in sspec:
        r = sspec["random"]
        samples += draw_samples(metric, r["seed"], r["count"], r.get("box"))

    tasks = cfg.get("tasks", [])
    for i, task in enumerate(tasks):
        _check_task(task, n, f"tasks[{i}]", connections)
    tolerances = dict(DEFAULT_TOLERANCES)
    tolerances.update(cfg.get("tolerances", {}))
    return Scenario(metric, connections, samples, tasks, tolerances, cfg.get("output", {}))


def _check_task(task, n, where, connections):
    for key in ("x0", "v0", "X0", "J0", "J0dot"):
        if key in task:
            _vector(task[key], n, f"{where}.{key}")
    for key in ("W", "curve"):
        if key in task:
            if len(task[key]) != n:
                raise ConfigError(f"{where}.{key}", f"expected {n} expressions, got {len(task[key])}")
            for j, e in enumerate(task[key]):
                try:
                    Expression(e, n, {}, allow_t=True)
                except ParseError as err:
                    raise ConfigError(f"{where}.{key}[{j}]", str(err)) from None
    for name in [task.get("connection")] + list(task.get("connections", [])):
        if name is not None and name not in connections:
            raise ConfigError(f"{where}.connection", f"unknown connection {name!r}")


# task runners ---------------------------------------------------------------------

def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FINSLER_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    threads = _threads()
    if threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _default_w(v: np.ndarray) -> np.ndarray:
    e = np.eye(len(v))
    return e[int(np.argmin(np.abs(v)))]


def _connection(sc: Scenario, task: dict):
    name = task.get("connection") or next(iter(sc.connections))
    return name, sc.connections[name]


def _initial_data(sc: Scenario, task: dict, where: str):
    if "x0" in task and "v0" in task:
        return np.asarray(task["x0"], float), np.asarray(task["v0"], float)
    if sc.samples:
        return sc.samples[0].x, sc.samples[0].v
    raise ConfigError(where, "needs x0 and v0 (or at least one sample)")


def _geodesic(sc, task, where):
    name, c = _connection(sc, task)
    x0, v0 = _initial_data(sc, task, where)
    t_span = tuple(task.get("t_span", (0.0, 1.0)))
    steps = int(task.get("steps", 256))
    return name, c, dyn.integrate_geodesic(c, x0, v0, t_span, steps), {
        "connection": name, "x0": x0.tolist(), "v0": v0.tolist(), "t_span": list(t_span), "steps": steps}


def _curve_table(curve: dyn.Curve) -> tuple:
    return curve.columns(), curve.rows()


def task_info(sc: Scenario, task, where):
    m = sc.metric
    pts = []
    for s in sc.samples:
        pts.append({"x": s.x.tolist(), "v": s.v.tolist(), "L": m.L(s.x, s.v),
                    "g": fundamental_tensor(m, s.x, s.v).components.tolist(),
                    "G": spray_coefficients(m, s.x, s.v).tolist()})
    outputs = {"family": m.family, "dimension": m.dim,
               "connections": [{"name": k, "kind": c.kind, "loss": c.loss} for k, c in sc.connections.items()],
               "samples": pts}
    return {"inputs": {}, "outputs": outputs}, None


def task_curvature(sc: Scenario, task, where):
    m = sc.metric
    names = list(sc.connections)

    def one(s: Sample):
        w = s.w if s.w is not None else _default_w(s.v)
        return w, [curv.flag_curvature(m, sc.connections[k], s.x, s.v, w) for k in names]

    results = _pmap(one, sc.samples)
    rows, table = [], []
    n = m.dim
    for s, (w, ks) in zip(sc.samples, results):
        rows.append({"x": s.x.tolist(), "v": s.v.tolist(), "w": w.tolist(), "K": dict(zip(names, ks))})
        table.append(list(s.x) + list(s.v) + list(w) + ks)
    cols = ([f"x{i + 1}" for i in range(n)] + [f"v{i + 1}" for i in range(n)]
            + [f"w{i + 1}" for i in range(n)] + [f"K_{k}" for k in names])
    return {"inputs": {"connections": names}, "outputs": {"flags": rows}}, (cols, table)


def task_geodesic(sc: Scenario, task, where):
    name, c, curve, inputs = _geodesic(sc, task, where)
    L = np.array([sc.metric.L(x, v) for x, v in zip(curve.x, curve.xdot)])
    outputs = {"x_end": curve.x[-1].tolist(), "xdot_end": curve.xdot[-1].tolist(),
               "L_drift": float(np.max(np.abs(L - L[0])) / abs(L[0])), "curve": curve.to_dict()}
    return {"inputs": inputs, "outputs": outputs}, _curve_table(curve)


def task_transport(sc: Scenario, task, where):
    name, c, curve, inputs = _geodesic(sc, task, where)
    kind = task.get("kind", dyn.GAMMA_PARALLEL)
    X0 = np.asarray(task.get("X0", inputs["v0"]), float)
    if kind == dyn.W_PARALLEL and "W" not in task:
        raise ConfigError(f"{where}.W", "WParallel transport needs W")
    field = dyn.parallel_transport(c, curve, X0, kind, task.get("W"))
    inputs.update({"kind": kind, "X0": X0.tolist()})
    k = len(field.t)
    sub = dyn.Curve(curve.t[:k], curve.x[:k], curve.xdot[:k]).with_field("X", field.values)
    outputs = {"complete": field.complete, "exit_time": field.exit_time,
               "X_end": field.values[-1].tolist(), "curve": sub.to_dict()}
    return {"inputs": inputs, "outputs": outputs}, _curve_table(sub)


def task_jacobi(sc: Scenario, task, where):
    name, c, curve, inputs = _geodesic(sc, task, where)
    if "J0dot" not in task:
        raise ConfigError(f"{where}.J0dot", "Jacobi task needs J0dot")
    J0 = np.asarray(task.get("J0", [0.0] * sc.metric.dim), float)
    J0dot = np.asarray(task["J0dot"], float)
    J = dyn.integrate_jacobi(sc.metric, c, curve, J0, J0dot)
    inputs.update({"J0": J0.tolist(), "J0dot": J0dot.tolist()})
    sub = curve.with_field("J", J.values).with_field("DJ", J.derivative)
    outputs = {"J_end": J.values[-1].tolist(), "curve": sub.to_dict()}
    return {"inputs": inputs, "outputs": outputs}, _curve_table(sub)


def task_variation(sc: Scenario, task, where):
    if "W" not in task:
        raise ConfigError(f"{where}.W", "variation task needs W")
    name, c = _connection(sc, task)
    if "curve" in task:
        if task.get("second"):
            raise ConfigError(f"{where}.second", "second variation needs a geodesic (x0, v0), not a curve")
        t_span = tuple(task.get("t_span", (0.0, 1.0)))
        steps = int(task.get("steps", 256))
        curve = dyn.Curve.from_expressions(task["curve"], t_span, steps)
        inputs = {"connection": name, "curve": task["curve"], "t_span": list(t_span), "steps": steps}
    else:
        name, c, curve, inputs = _geodesic(sc, task, where)
    inputs["W"] = task["W"]
    fixed = bool(task.get("second", False))
    spec = dyn.VariationSpec(curve, task["W"], fixed_endpoints=fixed)
    outputs = {"energy": dyn.energy(sc.metric, curve), "first_variation": dyn.first_variation(sc.metric, c, spec)}
    if task.get("second"):
        outputs["second_variation"] = dyn.second_variation(sc.metric, c, curve, spec)
    return {"inputs": inputs, "outputs": outputs}, None


def _checks_for(sc: Scenario, task, s: Sample, idx: int):
    checks = task.get("checks", ["bianchi", "metric", "symmetry", "torsion"])
    out = []
    for name, c in sc.connections.items():
        if "bianchi" in checks:
            for k, r in curv.bianchi_report(c, s.x, s.v).items():
                out.append(("bianchi", f"bianchi.{k}", name, idx, r.value))
        if "metric" in checks:
            out.append(("metric", "metric", name, idx, conn.metric_compatibility(c, s.x, s.v).value))
        if "torsion" in checks:
            T = conn.torsion(c, s.x, s.v)
            r = conn.Residual(T.max_abs(), float(np.max(np.abs(c(s.x, s.v)))))
            out.append(("torsion", "torsion", name, idx, r.value))
    if "symmetry" in checks:
        for k, r in curv.symmetry_report(sc.metric, s.x, s.v).items():
            out.append(("symmetry", f"symmetry.{k}", "chern", idx, r.value))
    return out


def _residual_records(flat, tolerances):
    records, worst, ok = [], {}, True
    for group, check, cname, idx, value in flat:
        tol = tolerances.get(check, tolerances[group])
        passed = bool(value <= tol)
        ok &= passed
        records.append({"check": check, "connection": cname, "sample": idx, "value": value,
                        "tolerance": tol, "pass": passed})
        worst[check] = max(worst.get(check, 0.0), value)
    return records, worst, ok


def task_verify(sc: Scenario, task, where):
    if not sc.samples:
        raise ConfigError("samples", "verify needs at least one sample")
    flat = [r for rs in _pmap(lambda p: _checks_for(sc, task, p[1], p[0]), list(enumerate(sc.samples))) for r in rs]
    records, worst, ok = _residual_records(flat, sc.tolerances)
    inputs = {"connections": list(sc.connections), "samples": len(sc.samples),
              "checks": task.get("checks", ["bianchi", "metric", "symmetry", "torsion"])}
    return {"inputs": inputs, "outputs": {"max": worst}, "residuals": records, "pass": ok}, None


def task_compare(sc: Scenario, task, where):
    if not sc.samples:
        raise ConfigError("samples", "compare needs at least one sample")
    names = task.get("connections")
    if names is None:
        if len(sc.connections) < 2:
            raise ConfigError(f"{where}.connections", "compare needs two connections")
        names = list(sc.connections)[:2]
    cA, cB = (sc.connections[k] for k in names)

    def one(p):
        idx, s = p
        return [(k, k, f"{names[0]}-{names[1]}", idx, r.value)
                for k, r in curv.compare_report(cA, cB, s.x, s.v).items()]

    flat = [r for rs in _pmap(one, list(enumerate(sc.samples))) for r in rs]
    records, worst, ok = _residual_records(flat, sc.tolerances)
    return {"inputs": {"connections": names, "samples": len(sc.samples)}, "outputs": {"max": worst},
            "residuals": records, "pass": ok}, None


RUNNERS = {
    "info": task_info, "curvature": task_curvature, "geodesic": task_geodesic,
    "transport": task_transport, "jacobi": task_jacobi, "variation": task_variation,
    "verify": task_verify, "compare": task_compare,
}

_RUNTIME_ERRORS = (ConeExit, ConeViolation, DegenerateMetric, DegenerateFlag, DomainError)


def run_task(sc: Scenario, task: dict, where: str, timing: bool = False) -> tuple[dict, tuple | None]:
    start = time.perf_counter()
    try:
        rec, table = RUNNERS[task["type"]](sc, task, where)
    except _RUNTIME_ERRORS as err:
        rec, table = {"inputs": {}, "outputs": {"error": str(err)}, "pass": False}, None
        if isinstance(err, ConeExit):
            rec["outputs"]["exit_time"] = err.time
    elapsed = (time.perf_counter() - start) * 1e3
    record = {
        "task": task["type"],
        "inputs": rec.get("inputs", {}),
        "outputs": rec.get("outputs", {}),
        "residuals": rec.get("residuals", []),
        "tolerance": {k: sc.tolerances[k] for k in sorted(sc.tolerances)} if task["type"] in VERIFICATION_TASKS else None,
        "pass": rec.get("pass", True),
        "runtime_ms": elapsed if timing else None,
    }
    return record, table


# output -----------------------------------------------------------------------

def _json(obj, indent=0) -> str:
    """JSON with floats at 17 significant digits (non-finite values become null)."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return dyn.fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _json(obj.tolist(), indent)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_report(report: dict) -> str:
    return _json(report) + "\n"


def _csv_text(table) -> str:
    cols, rows = table
    lines = [",".join(cols)] + [",".join(dyn.fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _residual_table(record) -> tuple:
    cols = ["task", "check", "connection", "sample", "value", "tolerance", "pass"]
    rows = [[record["task"], r["check"], r["connection"], r["sample"], r["value"], r["tolerance"], r["pass"]]
            for r in record["residuals"]]
    return cols, rows


def _csv_residuals(table) -> str:
    cols, rows = table
    out = [",".join(cols)]
    for row in rows:
        out.append(",".join(dyn.fmt(v) if isinstance(v, float) else str(v) for v in row))
    return "\n".join(out) + "\n"


def write_atomic(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_outputs(records, tables) -> list[str]:
    out = []
    for rec, table in zip(records, tables):
        if table is not None:
            out.append(_csv_text(table))
        elif rec["residuals"]:
            out.append(_csv_residuals(_residual_table(rec)))
        else:
            flat = [[k, v] for k, v in rec["outputs"].items() if isinstance(v, (int, float))]
            out.append(_csv_residuals((["quantity", "value"], flat)))
    return out


def emit(records, tables, out: str | None, fmt_: str):
    if fmt_ == "json":
        report = {"tasks": records, "pass": all(r["pass"] for r in records)}
        texts = [(out, dumps_report(report))]
    else:
        csvs = _csv_outputs(records, tables)
        if out is None or len(csvs) == 1:
            texts = [(out, "".join(csvs))]
        else:
            p = Path(out)
            texts = [(str(p.with_name(f"{p.stem}.{i}.{r['task']}{p.suffix or '.csv'}")), text)
                     for i, (r, text) in enumerate(zip(records, csvs))]
    for path, text in texts:
        if path is None:
            sys.stdout.write(text)
        else:
            write_atomic(Path(path), text)


# entry point --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finsler", description="Anisotropic tensor calculus scenarios.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run",) + TASKS:
        p = sub.add_parser(name, help="run every task in the config" if name == "run" else f"run {name} tasks")
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--out", help="output path (default: config output.path, else stdout)")
        p.add_argument("--format", choices=("json", "csv"), help="report format (default json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        sc = build_scenario(cfg)
        if args.command == "run":
            tasks = list(enumerate(sc.tasks))
        else:
            tasks = [(i, t) for i, t in enumerate(sc.tasks) if t["type"] == args.command]
            if not tasks:
                tasks = [(len(sc.tasks), {"type": args.command})]
        out = args.out or sc.output.get("path")
        fmt_ = args.format or sc.output.get("format", "json")
        timing = bool(sc.output.get("timing", False))
        records, tables = [], []
        for i, task in tasks:
            rec, table = run_task(sc, task, f"tasks[{i}]", timing)
            records.append(rec)
            tables.append(table)
    except ConfigError as err:
        print(f"finsler: config error: {err}", file=sys.stderr)
        return 2
    emit(records, tables, out, fmt_)
    failed = [r for r in records
              if not r["pass"] and (r["task"] in VERIFICATION_TASKS or "error" in r["outputs"])]
    return 1 if failed else 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
