"""Command-line entry point: ``ablab <command> [options]``.

Every run writes ``<command>.json`` (results plus the resolved config, sorted
keys, no timestamps), ``<command>.meta.json`` (timestamp, versions, runtime)
and the command's CSV files into the output directory.

Exit codes: 0 success, 2 regime error, 3 numerical failure, 1 bad config.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, audit, competitor, curves, normality, search
from .srmodel import BRACKET_WORDS, AlphaSpec, DomainError, ModelParams, bracket_vertical_coeff, degeneracy_margin, gamma, martinet_residual

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_NUMERIC = 0, 1, 2, 3

COMMANDS = ("check-abnormal", "check-normality", "build-competitor", "scan", "audit", "search")

# command-specific parameters and their defaults; None means "derive from the model"
DEFAULTS: dict[str, dict] = {
    "check-abnormal": {"samples": 201},
    "check-normality": {"t1": 0.1, "t2": 0.3, "tol": 1e-9, "grid": 1000, "lift_step": 1e-3},
    "build-competitor": {"eps": 0.9, "rho": None, "h": None, "h_rule": "rho^3/4", "paper_regime": False, "c": 0.125},
    "scan": {"eps": 0.9, "rho_min": 1e-6, "rho_max": 1e-2, "rho_points": 81, "h_rule": "rho^3/4"},
    "audit": {"eps": None, "samples": 1000, "nodes": 200, "mag_min": 1e-9, "mag_max": 1.0},
    "search": {"eps": None, "nodes": 100, "starts": 50, "endpoints": None},
}


class RegimeError(ValueError):
    def __init__(self, msg: str, detail: dict | None = None):
        super().__init__(msg)
        self.detail = detail or {}


@dataclass
class ExperimentConfig:
    command: str
    model: dict = field(default_factory=lambda: ModelParams(1, 10, AlphaSpec.constant(1.0)).to_dict())
    params: dict = field(default_factory=dict)
    out: str = "ablab_out"
    seed: int = 0
    threads: int = 1
    precision: int = competitor.ORACLE_DPS

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        ModelParams.from_dict(self.model)
        unknown = set(self.params) - set(DEFAULTS[self.command])
        if unknown:
            raise ValueError(f"unknown parameters for {self.command}: {sorted(unknown)}")
        self.params = {**DEFAULTS[self.command], **self.params}
        if self.precision < 80:
            raise ValueError("precision must be at least 80 digits")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def model_params(self) -> ModelParams:
        return ModelParams.from_dict(self.model)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


# ----------------------------------------------------------------------------
# helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _write_json(obj, fname: Path) -> None:
    fname.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")


def _write_csv(fname: Path, header, rows) -> None:
    with open(fname, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in r) + "\n")


# ----------------------------------------------------------------------------
# commands


def cmd_check_abnormal(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.model_params
    n = int(cfg.params["samples"])
    t = np.linspace(-0.99, 0.99, n)
    pts = gamma(t)
    resid = martinet_residual(pts, p)
    margin = degeneracy_margin(t, p)
    words = {w: float(bracket_vertical_coeff(w, gamma(0.0), p)) for w in BRACKET_WORDS}
    _write_csv(out / "check-abnormal_profile.csv", ["t", "martinet_residual", "degeneracy_margin"],
               [(float(a), float(b), float(c)) for a, b, c in zip(t, resid, margin)])
    return {
        "gamma_in_martinet_surface": bool(np.all(resid == 0.0)),
        "max_martinet_residual": float(np.max(np.abs(resid))),
        "degeneracy_margin_at_0": float(degeneracy_margin(0.0, p)),
        "degenerate_at_0": bool(degeneracy_margin(0.0, p) == 0.0),
        "length3_brackets_at_0": words,
        "min_margin_away_from_0": float(np.min(margin[np.abs(t) > 0.05])),
    }


def cmd_check_normality(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.model_params
    t1, t2 = float(cfg.params["t1"]), float(cfg.params["t2"])
    m = normality.Metric2(p)
    normal, defect = normality.is_normal_interval(t1, t2, m, cfg.params["tol"], int(cfg.params["grid"]))
    res = {"t1": t1, "t2": t2, "normal": bool(normal), "max_defect": defect,
           "alpha_vanishes": p.alpha.vanishes_on(t1, t2)}
    if t2 > t1:
        tt = np.linspace(t1, t2, int(cfg.params["grid"]))
        _write_csv(out / "check-normality_defect.csv", ["t", "defect"],
                   [(float(a), float(b)) for a, b in zip(tt, normality.geodesic_defect_on_axis(tt, m))])
        r, p0 = normality.best_lift_residual(t1, t2, p, cfg.params["lift_step"])
        res["best_lift_residual"] = r
        res["best_lift_covector"] = list(p0) if p0 is not None else None
    return res


def _oracle(eps, rho, h, p, margin_estimate, digits):
    dps = max(digits, competitor.oracle_dps_for(abs(margin_estimate), digits))
    o = competitor.margin_oracle(eps, rho, h, p, dps=dps)
    rel = abs(o["margin"] - margin_estimate) / abs(o["margin"]) if o["margin"] else math.inf
    return {**o, "relative_agreement": rel}


def cmd_build_competitor(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.model_params
    q = cfg.params
    eps = float(q["eps"])
    res: dict = {}
    if q["paper_regime"]:
        chk = competitor.paper_regime_check(p.a, p.b, float(q["c"]), q["rho"], eps, p, dps=cfg.precision)
        res["paper_regime"] = chk
        if not chk["checks"]["b_gt_4a_plus_4"] or not chk["checks"]["c_constraint"]:
            raise RegimeError(f"(a, b, c) = ({p.a}, {p.b}, {q['c']}) outside the non-minimality regime", res)
        if chk["extended_precision_required"]:
            res["note"] = "admissible rho below double range; report evaluated in extended precision only"
            return res
        rho = float(chk["rho"])
        h = float(chk["h"])
    else:
        if q["rho"] is None:
            raise ValueError("build-competitor needs rho (or --paper-regime)")
        rho = float(q["rho"])
        h = float(q["h"]) if q["h"] is not None else competitor.h_rule_from_string(q["h_rule"])(rho)
    try:
        plan = competitor.make_plan(eps, rho, h, p)
    except competitor.RegimeError as e:
        raise RegimeError(str(e)) from e
    rep = competitor.margin(plan, p)
    path = competitor.build_competitor(plan, p)
    curves.write_path_csv(path, p, out / "build-competitor_path.csv")
    res.update({
        "plan": asdict(plan),
        "margin_report": rep.to_dict(),
        "endpoint_defect": curves.endpoint_defect(path, [0.0, eps, 0.0])._asdict(),
        "oracle": _oracle(eps, plan.rho, plan.h, p, rep.margin, cfg.precision),
    })
    return res


def cmd_scan(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.model_params
    q = cfg.params
    grid = np.logspace(math.log10(q["rho_min"]), math.log10(q["rho_max"]), int(q["rho_points"]))
    res = competitor.scan(float(q["eps"]), grid, q["h_rule"], p, threads=cfg.threads)
    best = res["best"]
    _write_csv(out / "scan_points.csv", ["rho", "h", "delta", "cut_gain", "loop_cost", "margin"],
               [(r.rho, r.h, r.delta, r.cut_gain, r.loop_cost, r.margin) for r in res["points"]])
    if best is None:
        raise RegimeError("no grid point admits a competitor")
    out_d = {"best": best.to_dict(), "points": len(res["points"]), "skipped": res["skipped"]}
    if best.margin > 0:
        out_d["oracle"] = _oracle(best.epsilon, best.rho, best.h, p, best.margin, cfg.precision)
    return out_d


def cmd_audit(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.model_params
    q = cfg.params
    eps = float(q["eps"]) if q["eps"] is not None else audit.epsilon_theorem1(max(p.b, 1))
    rep = audit.run_audit(int(q["samples"]), eps, p, seed=cfg.seed, threads=cfg.threads,
                          nodes=int(q["nodes"]), mag_range=(q["mag_min"], q["mag_max"]))
    audit.write_rows_csv(rep.rows, out / "audit_samples.csv")
    return {"epsilon": eps, **rep.to_dict()}


def cmd_search(cfg: ExperimentConfig, out: Path) -> dict:
    p = cfg.model_params
    q = cfg.params
    eps = float(q["eps"]) if q["eps"] is not None else audit.epsilon_theorem1(max(p.b, 1))
    endpoints = q["endpoints"]
    if endpoints is None:
        endpoints = "half" if (p.alpha.kind == "constant" and p.alpha.c == 1.0 and p.b > 4 * p.a + 4) else "symmetric"
    if endpoints not in ("symmetric", "half"):
        raise ValueError("endpoints must be 'symmetric' or 'half'")
    prob = search.SearchProblem(p, eps, symmetric=endpoints == "symmetric", nodes=int(q["nodes"]))
    res = search.multistart(prob, int(q["starts"]), seed=cfg.seed, threads=cfg.threads)
    d = {"epsilon": eps, "endpoints": endpoints, **res.to_dict()}
    if res.best_path is not None:
        cert = out / "search_best_control.csv"
        search.write_certificate(res, cert)
        d["replay"] = search.replay_certificate(cert, prob)
    return d


HANDLERS = {
    "check-abnormal": cmd_check_abnormal,
    "check-normality": cmd_check_normality,
    "build-competitor": cmd_build_competitor,
    "scan": cmd_scan,
    "audit": cmd_audit,
    "search": cmd_search,
}


def run(cfg: ExperimentConfig) -> tuple[int, dict]:
    out = Path(os.environ.get("ABLAB_OUT") or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    code = EXIT_OK
    try:
        result = HANDLERS[cfg.command](cfg, out)
        status = "ok"
    except (RegimeError, competitor.RegimeError) as e:
        code, status, result = EXIT_REGIME, "regime-error", {"error": str(e), **getattr(e, "detail", {})}
    except (DomainError, curves.CorrectionError, ArithmeticError, np.linalg.LinAlgError) as e:
        code, status, result = EXIT_NUMERIC, "numerical-failure", {"error": f"{type(e).__name__}: {e}"}
    except ValueError as e:
        code, status, result = EXIT_CONFIG, "bad-config", {"error": str(e)}
    doc = {"command": cfg.command, "status": status, "config": cfg.to_dict(), "result": result}
    _write_json(doc, out / f"{cfg.command}.json")
    _write_json({"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "runtime_s": time.time() - t0,
                 "version": __version__, "python": platform.python_version(), "numpy": np.__version__},
                out / f"{cfg.command}.meta.json")
    return code, doc


# ----------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ablab", description="Numerical experiments on a Martinet-type sub-Riemannian structure.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON ExperimentConfig; command-line flags override it")
        sp.add_argument("--out", help="output directory (ABLAB_OUT overrides)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--precision", type=int, help="decimal digits for extended-precision oracles (>= 80)")
        sp.add_argument("--a", type=int)
        sp.add_argument("--b", type=int)
        sp.add_argument("--alpha", help="0.5 | const:1 | poly:c0,c1,.. | bump:center,width[,height] | JSON")
        for key, default in DEFAULTS[name].items():
            flag = "--" + key.replace("_", "-")
            if isinstance(default, bool):
                sp.add_argument(flag, action="store_true", default=None, dest=key)
            else:
                typ = str if key in ("h_rule", "endpoints") else (int if isinstance(default, int) else float)
                sp.add_argument(flag, type=typ, dest=key)
    return ap


def config_from_args(ns: argparse.Namespace) -> ExperimentConfig:
    base = json.loads(ns.config.read_text()) if ns.config else {"command": ns.command}
    if base.get("command", ns.command) != ns.command:
        raise ValueError(f"config is for {base['command']!r}, not {ns.command!r}")
    base["command"] = ns.command
    model = dict(base.get("model") or ModelParams(1, 10, AlphaSpec.constant(1.0)).to_dict())
    if ns.a is not None:
        model["a"] = ns.a
    if ns.b is not None:
        model["b"] = ns.b
    if ns.alpha is not None:
        model["alpha"] = AlphaSpec.parse(ns.alpha).to_dict()
    base["model"] = model
    params = dict(base.get("params") or {})
    for key in DEFAULTS[ns.command]:
        v = getattr(ns, key, None)
        if v is not None:
            params[key] = v
    base["params"] = params
    for key in ("out", "seed", "threads", "precision"):
        v = getattr(ns, key)
        if v is not None:
            base[key] = v
    return ExperimentConfig.from_dict(base)


def main(argv=None) -> int:
    ns = _parser().parse_args(argv)
    try:
        cfg = config_from_args(ns)
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as e:
        print(f"ablab: bad config: {e}", file=sys.stderr)
        return EXIT_CONFIG
    code, doc = run(cfg)
    print(json.dumps(_jsonable({"command": doc["command"], "status": doc["status"]}), sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
