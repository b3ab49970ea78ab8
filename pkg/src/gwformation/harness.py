"""Scenario configuration, experiment runs, sweeps and export.

A scenario is one JSON document validated against
``schema/scenario.schema.json``.  Unknown keys are rejected.  Defaults are
filled in by :func:`load_config` and echoed into every report.

Random initial clouds are drawn uniformly from the sampler box with
``numpy.random.Generator(numpy.random.Philox(key=seed))``.  Philox is
counter-based, so a seed gives the same points on every platform.

Reports are written with every float at 17 significant digits, so they
parse back to the same numbers bit for bit.  Wall-clock data and
timestamps live only under the ``metadata`` key.
"""
from __future__ import annotations

import copy
import csv
import datetime as _dt
import json
import math
import os
import time
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from .errors import GWFormationError, InfeasibleError, InputError, InternalSolverError
from .gw_problem import gw_objective
from .mmspace import GroupSpec, build_loss_tensor, graph_metric, pairwise_cost
from .outer_opt import OuterConfig, OuterContext, minimize_J
from .sdp_relax import LiftedPair, certified_ratio, certify, extract_assignment, zero_tolerance
from .steering import Box, LinearSystem, SteeringInstance, solve_steering

DEFAULTS = {
    "name": "scenario",
    "horizon": 10,
    "eps": 0.5,
    "boxes": {"state": 20.0, "control": 20.0, "terminal": 20.0},
    "metric": {"mode": "euclidean_target"},
    "solver": {
        "backend": "clarabel",
        "sdp_tol": 1e-5,
        "qp_tol": 1e-9,
        "ratio_tol": 1e-3,
        "rank_tol": 1e-5,
        "nonneg_lift": True,
    },
    "outer": {
        "max_outer_iters": 20,
        "step_rule": "backtracking",
        "initial_step": 1.0,
        "shrink": 0.5,
        "sufficient_decrease": 1e-4,
        "max_backtracks": 40,
        "inner_steps": 200,
        "dJ_tol": 1e-6,
    },
    "seed": 0,
}


def _schema():
    text = resources.files("gwformation").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ScenarioConfig:
    """A validated scenario with every default filled in (``data``)."""

    data: dict

    @property
    def system(self) -> LinearSystem:
        return LinearSystem(self.data["system"]["A"], self.data["system"]["B"])

    @property
    def horizon(self) -> int:
        return int(self.data["horizon"])

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.data["R"], dtype=float)

    @property
    def N(self) -> int:
        ic = self.data["initial_cloud"]
        return len(ic["points"]) if "points" in ic else int(ic["sampler"]["count"])

    @property
    def d(self) -> int:
        return self.system.d

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def mode(self) -> str:
        return self.data["metric"]["mode"]

    @property
    def cost_kind(self) -> str:
        return self.data["metric"]["cost"]

    def boxes(self):
        b = self.data["boxes"]
        d, m = self.system.d, self.system.m

        def mk(v, n):
            return Box.cube(v, n) if np.ndim(v) == 0 else Box(v)

        return mk(b["state"], d), mk(b["control"], m), mk(b["terminal"], d)

    def initial_points(self) -> np.ndarray:
        ic = self.data["initial_cloud"]
        if "points" in ic:
            return np.asarray(ic["points"], dtype=float)
        s = ic["sampler"]
        seed = int(s.get("seed", self.seed))
        return sample_uniform(s["low"], s["high"], int(s["count"]), seed)

    def target_points(self) -> np.ndarray | None:
        t = self.data.get("target")
        if t is None:
            return None
        if "points" in t:
            return np.asarray(t["points"], dtype=float)
        return shape_points(t["shape"], self.d)

    def group_spec(self) -> GroupSpec:
        m = self.data["metric"]
        return GroupSpec(m["group_of"], m["intra_weight"], m["inter_weight"])

    def outer_config(self) -> OuterConfig:
        o, s = self.data["outer"], self.data["solver"]
        return OuterConfig(
            max_outer_iters=o["max_outer_iters"],
            sdp_tol=s["sdp_tol"],
            qp_tol=s["qp_tol"],
            step_rule=o["step_rule"],
            initial_step=o["initial_step"],
            shrink=o["shrink"],
            sufficient_decrease=o["sufficient_decrease"],
            max_backtracks=o["max_backtracks"],
            inner_steps=o["inner_steps"],
            dJ_tol=o["dJ_tol"],
            seed=self.seed,
            backend=s["backend"],
        )

    def reference_costs(self) -> np.ndarray:
        if self.mode == "graph_groups":
            return graph_metric(self.group_spec(), self.N).entries
        return pairwise_cost(self.target_points(), self.cost_kind).entries

    def context(self, eps: float, x0=None) -> OuterContext:
        X, U, Xf = self.boxes()
        x0 = self.initial_points() if x0 is None else x0
        inst = SteeringInstance(self.system, self.horizon, self.R, eps, X, U, Xf, x0, x0)
        s = self.data["solver"]
        return OuterContext(inst, self.reference_costs(), self.cost_kind, s["ratio_tol"], s["rank_tol"], s["nonneg_lift"])

    def with_overrides(self, seed=None, tol=None, max_iters=None) -> "ScenarioConfig":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["seed"] = int(seed)
            sampler = data["initial_cloud"].get("sampler")
            if sampler is not None:
                sampler["seed"] = int(seed)
        if tol is not None:
            data["solver"]["sdp_tol"] = float(tol)
        if max_iters is not None:
            data["outer"]["max_outer_iters"] = int(max_iters)
        return load_config(data)


def sample_uniform(low, high, count: int, seed: int) -> np.ndarray:
    """``count`` points uniform on the box ``[low, high]`` (Philox stream)."""
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return low + (high - low) * rng.random((int(count), low.size))


def shape_points(shape: dict, d: int = 2) -> np.ndarray:
    """Points of a parametric target shape.

    ``circle``: ``count`` points evenly spaced on a circle of ``radius``
    (default 3) about ``center`` (default origin), starting at angle
    ``phase``.  ``line``: ``count`` evenly spaced points from ``start`` to
    ``end``.
    """
    n = int(shape["count"])
    if shape["kind"] == "circle":
        if d != 2:
            raise InputError("circle targets need a two-dimensional state")
        r = float(shape.get("radius", 3.0))
        c = np.asarray(shape.get("center", [0.0, 0.0]), dtype=float)
        th = float(shape.get("phase", 0.0)) + 2.0 * np.pi * np.arange(n) / n
        return c + r * np.column_stack([np.cos(th), np.sin(th)])
    if shape["kind"] == "line":
        a = np.asarray(shape.get("start", [-3.0] + [0.0] * (d - 1)), dtype=float)
        b = np.asarray(shape.get("end", [3.0] + [0.0] * (d - 1)), dtype=float)
        if a.size != d or b.size != d:
            raise InputError(f"target.shape: line endpoints must have {d} coordinates")
        s = np.linspace(0.0, 1.0, n)[:, None]
        return a + s * (b - a)
    raise InputError(f"target.shape.kind: unknown shape {shape['kind']!r}")


def _check_semantics(data):
    A = np.asarray(data["system"]["A"], dtype=float)
    B = np.asarray(data["system"]["B"], dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError("system.A: must be a square matrix")
    if B.ndim != 2 or B.shape[0] != A.shape[0]:
        raise InputError(f"system.B: must have {A.shape[0]} rows")
    d, m = A.shape[0], B.shape[1]
    R = np.asarray(data["R"], dtype=float)
    if R.shape != (m, m):
        raise InputError(f"R: must be {m}x{m}")
    if not np.allclose(R, R.T) or np.linalg.eigvalsh(R)[0] <= 0:
        raise InputError("R: must be symmetric positive definite")
    for key, n in (("state", d), ("control", m), ("terminal", d)):
        v = data["boxes"][key]
        if np.ndim(v) == 1 and len(v) != n:
            raise InputError(f"boxes.{key}: needs {n} half-widths, got {len(v)}")
    hx = np.broadcast_to(np.asarray(data["boxes"]["state"], dtype=float), (d,))
    ic = data["initial_cloud"]
    if "points" in ic:
        pts = np.asarray(ic["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != d:
            raise InputError(f"initial_cloud.points: every point needs {d} coordinates")
        N = pts.shape[0]
        if np.any(np.abs(pts) > hx):
            raise InputError("initial_cloud.points: points must lie inside the state box")
    else:
        s = ic["sampler"]
        lo, hi = np.asarray(s["low"], dtype=float), np.asarray(s["high"], dtype=float)
        if lo.size != d or hi.size != d:
            raise InputError(f"initial_cloud.sampler: low and high need {d} coordinates")
        if np.any(lo > hi):
            raise InputError("initial_cloud.sampler: low must not exceed high")
        if np.any(np.abs(lo) > hx) or np.any(np.abs(hi) > hx):
            raise InputError("initial_cloud.sampler: sampler box must lie inside the state box")
        N = int(s["count"])
    mode = data["metric"]["mode"]
    t = data.get("target")
    if mode == "euclidean_target":
        if t is None:
            raise InputError("target: required when metric.mode is euclidean_target")
        if "points" in t:
            tp = np.asarray(t["points"], dtype=float)
            if tp.ndim != 2 or tp.shape[1] != d:
                raise InputError(f"target.points: every point needs {d} coordinates")
            nt = tp.shape[0]
        else:
            nt = int(t["shape"]["count"])
            shape_points(t["shape"], d)
        if nt != N:
            raise InputError(f"target: has {nt} points but initial_cloud has {N}")
    else:
        if t is not None:
            raise InputError("target: must be absent when metric.mode is graph_groups")
        m_ = data["metric"]
        for key in ("group_of", "intra_weight", "inter_weight"):
            if key not in m_:
                raise InputError(f"metric.{key}: required when metric.mode is graph_groups")
        if len(m_["group_of"]) != N:
            raise InputError(f"metric.group_of: labels {len(m_['group_of'])} agents but initial_cloud has {N}")
        GroupSpec(m_["group_of"], m_["intra_weight"], m_["inter_weight"])
    if "eps_list" in data:
        el = data["eps_list"]
        if list(el) != sorted(el):
            raise InputError("eps_list: must be sorted ascending")


def load_config(path_or_data) -> ScenarioConfig:
    """Parse, validate and complete a scenario.

    Parameters
    ----------
    path_or_data : str, os.PathLike or dict
        A JSON file, or an already parsed document.

    Raises
    ------
    InputError
        Naming the offending field and the violated constraint.
    """
    if isinstance(path_or_data, dict):
        raw = copy.deepcopy(path_or_data)
    else:
        with open(path_or_data, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path_or_data}: not valid JSON ({exc})") from exc
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(e.absolute_path), e.validator))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise InputError(f"{_path(err)}: {err.validator} constraint violated: {err.message}")
    data = _merge(DEFAULTS, raw)
    if "R" not in data:
        m = np.asarray(data["system"]["B"], dtype=float).shape[1]
        data["R"] = np.eye(m).tolist()
    if "cost" not in data["metric"]:
        # plain distances against a target shape, squared distances against a graph metric
        data["metric"]["cost"] = "euclidean" if data["metric"]["mode"] == "euclidean_target" else "squared_euclidean"
    _check_semantics(data)
    return ScenarioConfig(data)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ExperimentReport:
    """Everything one CLI verb produces.

    ``runs`` holds one record per outer optimization, ``sweep`` one row
    per ``eps`` value, and ``summary`` the derived flags.
    """

    kind: str
    config: dict
    runs: list = field(default_factory=list)
    sweep: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "runs": self.runs,
            "sweep": self.sweep,
            "summary": self.summary,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(d["kind"], d["config"], d.get("runs", []), d.get("sweep", []), d.get("summary", {}), d.get("metadata", {}))

    def dumps(self) -> str:
        return dumps_json(self.to_dict())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path) -> "ExperimentReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _num(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def dumps_json(obj, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits; number lists stay on one line."""
    obj = _plain(obj)
    pad = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(_plain(v), (dict, list)) for v in obj) or all(
            isinstance(_plain(v), list) and all(not isinstance(_plain(w), (dict, list)) for w in _plain(v)) for v in obj
        ):
            return "[" + ", ".join(dumps_json(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps_json(v, indent + 1) for v in obj) + "\n" + "  " * indent + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _num(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _cert_dict(c) -> dict:
    return {
        "ratio": c.ratio,
        "rank_gap": c.rank_gap,
        "is_global": c.is_global,
        "is_rank_one": c.is_rank_one,
        "sdp_bound": c.sdp_bound,
        "coupling_value": c.coupling_value,
        "raw_rank_gap": c.raw_rank_gap,
        "polished": c.polished,
    }


def _lift_dict(pair: LiftedPair) -> dict:
    if pair.is_rank_one_lift():
        return {"kind": "rank_one"}
    return {"kind": "dense", "Qhat": pair.Qhat}


def _lift_from(record) -> LiftedPair:
    P = np.asarray(record["coupling"], dtype=float)
    lift = record["lift"]
    if lift["kind"] == "rank_one":
        return LiftedPair.rank_one(P)
    return LiftedPair(P, np.asarray(lift["Qhat"], dtype=float))


def _run_once(cfg: ScenarioConfig, eps: float, x0: np.ndarray, run_id: str) -> dict:
    ctx = cfg.context(eps, x0)
    t0 = time.perf_counter()
    xd, hist, best = minimize_J(x0, None, cfg.outer_config(), ctx)
    wall = time.perf_counter() - t0
    traj = best.trajectory
    perm, resid = extract_assignment(best.pair.P)
    tgt = cfg.target_points()
    rec = {
        "run_id": run_id,
        "eps": eps,
        "seed": cfg.seed,
        "status": "ok",
        "cost_kind": cfg.cost_kind,
        "x0": x0,
        "xd": xd,
        "x_target": None if tgt is None else tgt,
        "C_ref": ctx.C_ref,
        "J": best.J,
        "rho": best.rho,
        "weighted_cost": eps * best.rho,
        "gw_value": best.gw_value,
        "coupling": best.pair.P.entries,
        "extracted_coupling": best.coupling.entries,
        "lift": _lift_dict(best.pair),
        "certificate": _cert_dict(best.certificate),
        "assignment": {"permutation": perm, "residual": resid},
        "states": traj.states,
        "controls": traj.controls,
        "history": {
            "status": hist.status,
            "outer_iterations": len(hist.iterates) - 1,
            "inner_steps": list(hist.inner_steps),
            "J": [it[1] for it in hist.iterates],
            "rho": [it[2] for it in hist.iterates],
            "gw_value": [it[3] for it in hist.iterates],
            "ratio": [it[4].ratio for it in hist.iterates],
            "rank_gap": [it[4].rank_gap for it in hist.iterates],
            "monotone": hist.is_monotone(),
        },
    }
    return rec, wall


def _metadata(walls: dict) -> dict:
    from . import __version__
    from .accel import BACKEND

    return {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "wall_time_s": walls,
        "version": __version__,
        "kernels": BACKEND,
    }


def run_experiment(cfg: ScenarioConfig, eps: float | None = None) -> ExperimentReport:
    """One seeded outer optimization with final steering and certificate.

    Raises
    ------
    InfeasibleError
        Annotated with the scenario name; ``.agent`` is preserved.
    """
    eps = float(cfg.data["eps"] if eps is None else eps)
    x0 = cfg.initial_points()
    try:
        rec, wall = _run_once(cfg, eps, x0, "run-0")
    except InfeasibleError as exc:
        raise InfeasibleError(f"scenario {cfg.data['name']!r}: {exc}", exc.agent) from exc
    return ExperimentReport(
        "run",
        cfg.data,
        runs=[rec],
        summary={"certificate": rec["certificate"]},
        metadata=_metadata({"run-0": wall}),
    )


def _monotone_flags(rows):
    ok = [r for r in rows if r["status"] == "ok"]
    rho = [r["control_cost"] for r in ok]
    gw = [r["gw_distance"] for r in ok]
    return {
        "complete": len(ok) == len(rows),
        "control_cost_nonincreasing": bool(all(b <= a for a, b in zip(rho, rho[1:]))),
        "gw_distance_nondecreasing": bool(all(b >= a for a, b in zip(gw, gw[1:]))),
        "extremes_strict": bool(len(ok) >= 2 and rho[-1] < rho[0] and gw[-1] > gw[0]),
    }


def sweep_epsilon(cfg: ScenarioConfig, eps_list=None) -> ExperimentReport:
    """One run per ``eps`` on a shared initial cloud.

    A failing row is recorded with its error and the sweep continues.
    """
    eps_list = list(cfg.data.get("eps_list", [cfg.data["eps"]]) if eps_list is None else eps_list)
    if not eps_list:
        raise InputError("eps_list: must not be empty")
    if any(not e > 0 for e in eps_list):
        raise InputError("eps_list: values must be positive")
    if eps_list != sorted(eps_list):
        raise InputError("eps_list: must be sorted ascending")
    x0 = cfg.initial_points()
    runs, rows, walls = [], [], {}
    for k, eps in enumerate(eps_list):
        run_id = f"eps-{k}"
        try:
            rec, wall = _run_once(cfg, float(eps), x0, run_id)
            walls[run_id] = wall
            runs.append(rec)
            rows.append({
                "run_id": run_id, "eps": float(eps), "status": "ok",
                "control_cost": rec["rho"], "gw_distance": rec["gw_value"],
                "weighted_cost": rec["weighted_cost"], "J": rec["J"], "error": None,
            })
        except GWFormationError as exc:
            status = "infeasible" if isinstance(exc, InfeasibleError) else "numeric_failure"
            rows.append({
                "run_id": run_id, "eps": float(eps), "status": status,
                "control_cost": float("nan"), "gw_distance": float("nan"),
                "weighted_cost": float("nan"), "J": float("nan"), "error": str(exc),
            })
    return ExperimentReport("sweep", cfg.data, runs=runs, sweep=rows,
                            summary=_monotone_flags(rows), metadata=_metadata(walls))


def cluster_diagnostics(xd, spec: GroupSpec, cost_kind: str = "squared_euclidean", assignment=None) -> dict:
    """Intra- and inter-group pairwise statistics of a final formation.

    GW matching is label-free, so agent ``i`` inherits the group of the
    graph node ``assignment[i]`` it is coupled to (identity by default).
    Clusters come from single linkage on the pairwise costs, cut at the
    midpoint of the two graph weights.  The ``scaled_*`` entries repeat the
    cut after rescaling costs so their mean matches the graph metric's,
    which separates shape from overall size.
    """
    X = np.asarray(xd, dtype=float)
    N = X.shape[0]
    perm = np.arange(N) if assignment is None else np.asarray(assignment, dtype=int)
    lab = [spec.labels[perm[i]] for i in range(N)]
    C = pairwise_cost(X, cost_kind).entries
    E = pairwise_cost(X, "euclidean").entries
    iu = np.triu_indices(N, 1)
    same = np.array([lab[i] == lab[k] for i, k in zip(*iu)])
    out = {"cost_kind": cost_kind, "agent_groups": lab}
    for name, M in (("cost", C), ("distance", E)):
        v = M[iu]
        out[f"intra_mean_{name}"] = float(v[same].mean()) if same.any() else float("nan")
        out[f"inter_mean_{name}"] = float(v[~same].mean()) if (~same).any() else float("nan")
    out["intra_inter_ratio"] = out["intra_mean_cost"] / out["inter_mean_cost"] if (~same).any() else float("nan")
    out["expected_ratio"] = spec.intra_weight / spec.inter_weight
    thr = 0.5 * (spec.intra_weight + spec.inter_weight)
    out["threshold"] = thr
    groups = sorted(sorted(i for i in range(N) if lab[i] == g) for g in set(lab))

    def cut(M):
        if N == 1:
            return [0]
        cl = fcluster(linkage(squareform(M, checks=False), method="single"), t=thr, criterion="distance")
        first = {}
        return [first.setdefault(int(c), len(first)) for c in cl]  # order-stable labels

    def summarize(prefix, cl):
        k = max(cl) + 1
        found = sorted(sorted(i for i in range(N) if cl[i] == c) for c in range(k))
        out[f"{prefix}clusters"] = cl
        out[f"{prefix}n_clusters"] = k
        out[f"{prefix}cluster_sizes"] = sorted(len(g) for g in found)
        out[f"{prefix}clusters_match_groups"] = found == groups

    summarize("", cut(C))
    ref = graph_metric(spec, N).entries
    scale = float(ref[iu].mean() / C[iu].mean()) if C[iu].mean() > 0 else 1.0
    out["scale"] = scale
    summarize("scaled_", cut(C * scale))
    return out


def grouping_experiment(cfg: ScenarioConfig, eps: float | None = None) -> ExperimentReport:
    """Outer optimization against a group graph metric, with cluster diagnostics."""
    if cfg.mode != "graph_groups":
        raise InputError("metric.mode: grouping_experiment needs graph_groups")
    rep = run_experiment(cfg, eps)
    rep.kind = "group"
    rec = rep.runs[0]
    rec["clusters"] = cluster_diagnostics(rec["xd"], cfg.group_spec(), cfg.cost_kind, rec["assignment"]["permutation"])
    rep.summary["clusters"] = rec["clusters"]
    return rep


# ---------------------------------------------------------------------------
# checks and export


def certify_report(report: ExperimentReport) -> list:
    """Recompute values and certificates from the solutions stored in a report."""
    cfg = load_config(report.config)
    out = []
    for rec in report.runs:
        xd = np.asarray(rec["xd"], dtype=float)
        C_ref = np.asarray(rec["C_ref"], dtype=float)
        G = build_loss_tensor(pairwise_cost(xd, rec["cost_kind"]), C_ref)
        pair = _lift_from(rec)
        stored = rec["certificate"]
        solver = cfg.data["solver"]
        own = certify(pair, G, solver["ratio_tol"], solver["rank_tol"])
        U = gw_objective(np.asarray(rec["extracted_coupling"], dtype=float), G)
        ratio = certified_ratio(U, stored["sdp_bound"], zero_tolerance(G, solver["sdp_tol"]))
        gw = float(np.sum(G.entries * pair.Qhat))
        xbox, ubox, fbox = cfg.boxes()
        inst = SteeringInstance(cfg.system, cfg.horizon, cfg.R, rec["eps"], xbox, ubox, fbox, rec["x0"], xd)
        rho = solve_steering(inst, tol=solver["qp_tol"], backend=solver["backend"]).control_cost
        row = {
            "run_id": rec["run_id"],
            "ratio": ratio,
            "rank_gap": own.rank_gap,
            "is_global": bool(abs(ratio - 1.0) <= solver["ratio_tol"]),
            "is_rank_one": own.is_rank_one,
            "stored_ratio": stored["ratio"],
            "stored_rank_gap": stored["rank_gap"],
            "gw_value": gw,
            "gw_error": abs(gw - rec["gw_value"]),
            "coupling_value": U,
            "rho": rho,
            "rho_error": abs(rho - rec["rho"]),
        }
        row["consistent"] = bool(
            row["gw_error"] <= 1e-9
            and row["rho_error"] <= 1e-6 * max(1.0, abs(rec["rho"]))
            and row["is_global"] == stored["is_global"]
            and row["is_rank_one"] == stored["is_rank_one"]
        )
        out.append(row)
    return out


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) if isinstance(v, float) else v for v in r])


def export(report: ExperimentReport, fmt: str, out_dir) -> list:
    """Write a report as CSV tables or a JSON document.

    ``csv`` writes ``trajectories.csv``, ``sweep.csv`` and
    ``certificates.csv``; ``json`` writes ``report.json``.

    Returns
    -------
    list of str
        Paths written.

    Raises
    ------
    OSError
        If ``out_dir`` cannot be created or written.
    """
    os.makedirs(out_dir, exist_ok=True)
    if fmt == "json":
        path = os.path.join(out_dir, "report.json")
        report.save(path)
        return [path]
    if fmt != "csv":
        raise InputError(f"unknown export format {fmt!r}")
    d = len(report.runs[0]["states"][0][0]) if report.runs else int(np.asarray(report.config["system"]["A"]).shape[0])
    m = len(report.runs[0]["controls"][0][0]) if report.runs else int(np.asarray(report.config["system"]["B"]).shape[1])
    header = ["run_id", "agent", "t"] + [f"x{k}" for k in range(d)] + [f"u{k}" for k in range(m)]
    rows = []
    for rec in report.runs:
        S = np.asarray(rec["states"], dtype=float)
        U = np.asarray(rec["controls"], dtype=float)
        for i in range(S.shape[0]):
            for t in range(S.shape[1]):
                u = [float(v) for v in U[i, t]] if t < U.shape[1] else [""] * m
                rows.append([rec["run_id"], i, t] + [float(v) for v in S[i, t]] + u)
    paths = [os.path.join(out_dir, n) for n in ("trajectories.csv", "sweep.csv", "certificates.csv")]
    _write_csv(paths[0], header, rows)
    _write_csv(paths[1], ["eps", "control_cost", "gw_distance"],
               [[float(r["eps"]), float(r["control_cost"]), float(r["gw_distance"])] for r in report.sweep])
    _write_csv(paths[2], ["run_id", "ratio", "rank_gap"],
               [[r["run_id"], float(r["certificate"]["ratio"]), float(r["certificate"]["rank_gap"])] for r in report.runs])
    return paths


def exit_code_for(exc: BaseException) -> int:
    """CLI exit status: 2 for infeasibility, 3 for numeric failures, 1 otherwise."""
    if isinstance(exc, InfeasibleError):
        return 2
    if isinstance(exc, (ArithmeticError, InternalSolverError)):
        return 3
    return 1
