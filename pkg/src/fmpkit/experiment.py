"""Config loading, trial execution and result files for the command-line runner.

Configs are YAML mappings; every field has a default, so an empty file runs
the no-RIS baseline at the default system parameters.  See ``configs/`` for
annotated examples.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .channel_sim import CHANNEL_MODELS, Dimensions, PathLossModel, draw_channels, to_state
from .errors import ConfigInvalid, FmpError
from .fbl_metrics import MSE_MODES, SystemParams, snapshot
from .problems import KINDS, MIN_KINDS, dinkelbach_gee, gda_maxmin_ee, prepare_start, solve_kind
from .ris import MODES, SETS, RisConfig, ao_driver

METHODS = ("framework", "gda", "dinkelbach", "both")

RIS_DEFAULTS = {
    "enabled": False, "M": 20, "set": "D", "varsigma": 0.05, "theta_min": 0.2,
    "varpi": 1.0, "phi": 0.0, "phases": 8, "mode": "optimized",
}
DEFAULTS = {
    "kind": "sum_delay", "method": "framework", "K": 2, "N_BS": 4, "N_u": 3, "streams": 1,
    "P_dB": [10.0], "P_s": 5.0, "eta": 1.0, "n": 256, "eps": 1e-5, "L_bits": 256.0,
    "r_th": 0.1, "alpha": 0.5, "alpha_k": 1.0, "mse_mode": "literal", "channel": "simulated",
    "amplitude_mode": "amplitude", "ris": RIS_DEFAULTS, "trials": 1, "seed": 0,
    "delta": 1e-4, "max_iter": 200, "out": "results",
}


def _number(path, value, *, integer=False, low=None, high=None, low_open=False, high_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigInvalid(path, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigInvalid(path, f"expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigInvalid(path, "must be finite")
    if low is not None and (value <= low if low_open else value < low):
        raise ConfigInvalid(path, f"must be {'>' if low_open else '>='} {low}, got {value}")
    if high is not None and (value >= high if high_open else value > high):
        raise ConfigInvalid(path, f"must be {'<' if high_open else '<='} {high}, got {value}")
    return int(value) if integer else float(value)


def _choice(path, value, options):
    if value not in options:
        raise ConfigInvalid(path, f"must be one of {list(options)}, got {value!r}")
    return value


def _per_user(path, value, K, **rules):
    if isinstance(value, list):
        if len(value) != K:
            raise ConfigInvalid(path, f"expected {K} entries, got {len(value)}")
        return [_number(f"{path}[{i}]", v, **rules) for i, v in enumerate(value)]
    return _number(path, value, **rules)


def validate_config(raw) -> dict:
    """Merge ``raw`` over the defaults and check every field; returns a plain dict."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigInvalid("<root>", "config must be a mapping")
    for key in raw:
        if key not in DEFAULTS:
            raise ConfigInvalid(str(key), "unknown field")
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update({k: v for k, v in raw.items() if k != "ris"})
    ris_raw = raw.get("ris", {}) or {}
    if not isinstance(ris_raw, dict):
        raise ConfigInvalid("ris", "must be a mapping")
    for key in ris_raw:
        if key not in RIS_DEFAULTS:
            raise ConfigInvalid(f"ris.{key}", "unknown field")
    cfg["ris"] = {**RIS_DEFAULTS, **ris_raw}

    cfg["kind"] = _choice("kind", cfg["kind"], KINDS)
    cfg["method"] = _choice("method", cfg["method"], METHODS)
    for name in ("K", "N_BS", "N_u", "streams", "trials", "max_iter"):
        cfg[name] = _number(name, cfg[name], integer=True, low=1)
    cfg["seed"] = _number("seed", cfg["seed"], integer=True, low=0)
    K = cfg["K"]
    if not isinstance(cfg["P_dB"], list):
        cfg["P_dB"] = [cfg["P_dB"]]
    if not cfg["P_dB"]:
        raise ConfigInvalid("P_dB", "sweep must contain at least one point")
    cfg["P_dB"] = [_number(f"P_dB[{i}]", v) for i, v in enumerate(cfg["P_dB"])]
    cfg["P_s"] = _number("P_s", cfg["P_s"], low=0)
    cfg["eta"] = _number("eta", cfg["eta"], low=1)
    cfg["n"] = _number("n", cfg["n"], integer=True, low=1)
    cfg["eps"] = _number("eps", cfg["eps"], low=0, high=0.5, low_open=True, high_open=True)
    cfg["L_bits"] = _per_user("L_bits", cfg["L_bits"], K, low=0, low_open=True)
    cfg["r_th"] = _per_user("r_th", cfg["r_th"], K, low=0)
    cfg["alpha"] = _per_user("alpha", cfg["alpha"], K, low=0, high=1)
    cfg["alpha_k"] = _per_user("alpha_k", cfg["alpha_k"], K, low=0)
    cfg["mse_mode"] = _choice("mse_mode", cfg["mse_mode"], MSE_MODES)
    cfg["channel"] = _choice("channel", cfg["channel"], CHANNEL_MODELS)
    cfg["amplitude_mode"] = _choice("amplitude_mode", cfg["amplitude_mode"], ("amplitude", "literal"))
    cfg["delta"] = _number("delta", cfg["delta"], low=0, low_open=True)
    if not isinstance(cfg["out"], str):
        raise ConfigInvalid("out", "must be a path string")

    ris = cfg["ris"]
    if not isinstance(ris["enabled"], bool):
        raise ConfigInvalid("ris.enabled", "must be true or false")
    ris["M"] = _number("ris.M", ris["M"], integer=True, low=1)
    ris["set"] = _choice("ris.set", ris["set"], SETS)
    ris["varsigma"] = _number("ris.varsigma", ris["varsigma"], low=0, high=1, high_open=True)
    ris["theta_min"] = _number("ris.theta_min", ris["theta_min"], low=0, high=1)
    ris["varpi"] = _number("ris.varpi", ris["varpi"], low=0)
    ris["phi"] = _number("ris.phi", ris["phi"])
    ris["phases"] = _number("ris.phases", ris["phases"], integer=True, low=1)
    ris["mode"] = _choice("ris.mode", ris["mode"], MODES)

    if cfg["kind"] == "wsum_sinr" and cfg["streams"] != 1:
        raise ConfigInvalid("streams", "wsum_sinr needs one stream per user")
    if cfg["kind"] == "see_gee" and isinstance(cfg["alpha"], list):
        raise ConfigInvalid("alpha", "see_gee needs a scalar alpha")
    if cfg["method"] != "framework":
        if cfg["ris"]["enabled"]:
            raise ConfigInvalid("method", "baselines run without an RIS")
        if cfg["method"] in ("gda", "both") and cfg["kind"] not in ("maxmin_ee", "see_gee"):
            raise ConfigInvalid("method", "baselines exist for maxmin_ee and see_gee only")
        if cfg["method"] == "gda" and cfg["kind"] != "maxmin_ee":
            raise ConfigInvalid("method", "gda applies to maxmin_ee")
        if cfg["method"] == "dinkelbach" and cfg["kind"] != "see_gee":
            raise ConfigInvalid("method", "dinkelbach applies to see_gee")
        if cfg["kind"] == "see_gee" and cfg["alpha"] != 0:
            raise ConfigInvalid("alpha", "the Dinkelbach baseline needs alpha = 0 (pure GEE)")
    return cfg


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigInvalid("<file>", str(exc)) from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigInvalid("<file>", f"not valid YAML: {exc}") from exc
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    """Stable digest of everything that affects results (``out`` excluded)."""
    body = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:12]


def system_params(cfg: dict, P_dB: float) -> SystemParams:
    return SystemParams(
        P=10.0 ** (P_dB / 10.0), P_s=cfg["P_s"], eta=cfg["eta"], n=cfg["n"], eps=cfg["eps"],
        L_bits=cfg["L_bits"], r_th=cfg["r_th"], alpha=cfg["alpha"], alpha_k=cfg["alpha_k"],
        mse_mode=cfg["mse_mode"],
    )


def ris_config(cfg: dict) -> RisConfig:
    r = cfg["ris"]
    return RisConfig(M=r["M"], set=r["set"], varsigma=r["varsigma"], theta_min=r["theta_min"],
                     varpi=r["varpi"], phi=r["phi"], phases=r["phases"])


def trial_channels(cfg: dict, trial: int):
    M = cfg["ris"]["M"] if cfg["ris"]["enabled"] else 0
    dims = Dimensions(cfg["K"], cfg["N_BS"], cfg["N_u"], M)
    kwargs = {}
    if cfg["channel"] == "simulated":
        kwargs["model"] = PathLossModel(amplitude_mode=cfg["amplitude_mode"])
    return draw_channels(cfg["channel"], dims, cfg["seed"], trial, **kwargs)


# ---------------------------------------------------------------------------
# one trial


def _fmt(x) -> str:
    return format(float(x), ".10e")


@dataclass
class ResultRecord:
    config_hash: str
    run_id: str
    P_dB: float
    trial: int
    method: str
    status: str
    objective: float = math.nan
    iterations: int = 0
    converged: bool = False
    metrics: dict = field(default_factory=dict)
    message: str = ""

    COLUMNS = ("config_hash", "run_id", "P_dB", "trial", "method", "status", "objective",
               "iterations", "converged", "sum_rate", "gee", "rate", "ee", "delay", "mse", "message")

    def as_row(self) -> dict:
        m = self.metrics

        def users(name):
            return ";".join(_fmt(v) for v in m.get(name, []))

        return {
            "config_hash": self.config_hash, "run_id": self.run_id, "P_dB": _fmt(self.P_dB),
            "trial": self.trial, "method": self.method, "status": self.status,
            "objective": _fmt(self.objective), "iterations": self.iterations,
            "converged": int(self.converged),
            "sum_rate": _fmt(sum(m.get("rate", [math.nan]))), "gee": _fmt(m.get("gee", math.nan)),
            "rate": users("rate"), "ee": users("ee"), "delay": users("delay"), "mse": users("mse"),
            "message": self.message,
        }


def _run_id(h, p_index, trial, method):
    return f"{h}-p{p_index}-t{trial}-{method}"


def run_trial(cfg: dict, p_index: int, trial: int):
    """Execute every configured method on one (P point, trial); never raises."""
    h = config_hash(cfg)
    P_dB = cfg["P_dB"][p_index]
    methods = ["framework"] if cfg["method"] == "framework" else (
        ["framework", "gda" if cfg["kind"] == "maxmin_ee" else "dinkelbach"]
        if cfg["method"] == "both" else [cfg["method"]])
    records, traces = [], {}
    try:
        params = system_params(cfg, P_dB)
        ch = trial_channels(cfg, trial)
    except FmpError as exc:
        for m in methods:
            records.append(ResultRecord(h, _run_id(h, p_index, trial, m), P_dB, trial, m, "error",
                                        message=f"{type(exc).__name__}: {exc}"))
        return records, traces
    start = None
    for m in methods:
        rid = _run_id(h, p_index, trial, m)
        try:
            if m == "framework" and cfg["ris"]["enabled"]:
                res, tr = ao_driver(cfg["kind"], ch, params, ris_config(cfg), mode=cfg["ris"]["mode"],
                                    streams=cfg["streams"], delta=cfg["delta"],
                                    max_iter=cfg["max_iter"], seed=cfg["seed"], trial=trial)
                state, obj, iters, conv = res.state, res.objective, res.iterations, res.converged
                lines = [{"iteration": i, "objective": o, "step": s, "accepted": bool(a)}
                         for i, (o, s, a) in enumerate(zip(tr.objectives, tr.steps, tr.accepted))]
            else:
                base = to_state(ch, None, cfg["streams"])
                if start is None:
                    start = prepare_start(cfg["kind"], base, params, cfg["streams"])
                if m == "framework":
                    res, tr, _ = solve_kind(cfg["kind"], base, params, delta=cfg["delta"],
                                            max_iter=cfg["max_iter"], start=start)
                    lines = [{"iteration": i, "objective": o} for i, o in enumerate(tr.objectives)]
                    for line, st_, acc in zip(lines[1:], tr.statuses, tr.accepted):
                        line.update(status=st_, accepted=bool(acc))
                    conv = res.converged
                else:
                    fn = gda_maxmin_ee if m == "gda" else dinkelbach_gee
                    res, tr = fn(base, params, cfg["delta"], start=start)
                    lines = [{"iteration": i, "objective": o, "outer": k}
                             for i, (o, k) in enumerate(zip(tr.objectives, tr.outer_index))]
                    conv = res.converged
                state = start.with_beamformers(res.variables)
                obj, iters = res.objective, res.iterations
            metrics = snapshot(state, params).as_dict()
            records.append(ResultRecord(h, rid, P_dB, trial, m, "ok", obj, iters, conv, metrics))
            traces[rid] = lines
        except (FmpError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            records.append(ResultRecord(h, rid, P_dB, trial, m, "error",
                                        message=f"{type(exc).__name__}: {exc}"))
    return records, traces


def _task(args):
    return run_trial(*args)


# ---------------------------------------------------------------------------
# whole experiment


@dataclass
class RunOutput:
    records: list
    traces: dict
    summary: list
    out_dir: Path

    @property
    def failures(self) -> int:
        return sum(r.status != "ok" for r in self.records)


def run_experiment(cfg: dict, *, jobs: int = 1, trend: bool = False) -> RunOutput:
    """Run every (P point, trial) pair and collect results in a fixed order."""
    tasks = [(cfg, p, t) for p in range(len(cfg["P_dB"])) for t in range(cfg["trials"])]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_task, tasks))
    else:
        outs = [_task(t) for t in tasks]
    records, traces = [], {}
    for recs, trs in outs:
        records.extend(recs)
        traces.update(trs)
    summary = summarize(cfg, records, trend)
    return RunOutput(records, traces, summary, Path(cfg["out"]))


SUMMARY_COLUMNS = ("P_dB", "method", "n_ok", "n_failed", "objective_mean", "objective_se",
                   "iterations_mean", "sum_rate_mean")
TREND_COLUMNS = ("objective_change", "objective_trend", "sum_rate_change", "sum_rate_trend")


def _trend(change: float) -> str:
    if not math.isfinite(change):
        return ""
    return "flat" if change == 0 else ("up" if change > 0 else "down")


def summarize(cfg: dict, records: list, trend: bool = False) -> list:
    """Per-(P, method) means and standard errors, recomputable from the records."""
    rows = []
    methods = []
    for r in records:
        if r.method not in methods:
            methods.append(r.method)
    prev = {}
    for P in cfg["P_dB"]:
        for m in methods:
            group = [r for r in records if r.P_dB == P and r.method == m]
            ok = [r for r in group if r.status == "ok"]
            obj = np.array([r.objective for r in ok], dtype=float)
            rates = np.array([sum(r.metrics["rate"]) for r in ok], dtype=float)
            its = np.array([r.iterations for r in ok], dtype=float)
            mean = float(obj.mean()) if obj.size else math.nan
            se = float(obj.std(ddof=1) / math.sqrt(obj.size)) if obj.size > 1 else math.nan
            rate_mean = float(rates.mean()) if rates.size else math.nan
            row = {"P_dB": _fmt(P), "method": m, "n_ok": len(ok), "n_failed": len(group) - len(ok),
                   "objective_mean": _fmt(mean), "objective_se": _fmt(se),
                   "iterations_mean": _fmt(its.mean() if its.size else math.nan),
                   "sum_rate_mean": _fmt(rate_mean)}
            if trend:
                pm, pr = prev.get(m, (math.nan, math.nan))
                row["objective_change"] = _fmt(mean - pm)
                row["objective_trend"] = _trend(mean - pm)
                row["sum_rate_change"] = _fmt(rate_mean - pr)
                row["sum_rate_trend"] = _trend(rate_mean - pr)
                prev[m] = (mean, rate_mean)
            rows.append(row)
    return rows


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def write_outputs(run: RunOutput, trend: bool = False) -> None:
    out = run.out_dir
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(_csv_text(ResultRecord.COLUMNS, [r.as_row() for r in run.records]))
    cols = SUMMARY_COLUMNS + (TREND_COLUMNS if trend else ())
    (out / "summary.csv").write_text(_csv_text(cols, run.summary))
    for rid in sorted(run.traces):
        lines = "".join(json.dumps(line, sort_keys=True) + "\n" for line in run.traces[rid])
        (out / "traces" / f"{rid}.jsonl").write_text(lines)


def check_traces(out_dir, kind: str, slack: float = 1e-9) -> dict:
    """Re-read every trace file and test direction-appropriate monotonicity."""
    maximize = kind not in MIN_KINDS
    verdict = {}
    for path in sorted(Path(out_dir, "traces").glob("*.jsonl")):
        obj = [json.loads(line)["objective"] for line in path.read_text().splitlines() if line]
        if path.stem.endswith(("-gda", "-dinkelbach")):
            # baselines report the true objective after each inner solve; not gated
            continue
        ok = True
        for a, b in zip(obj, obj[1:]):
            tol = slack * max(1.0, abs(a))
            if (maximize and b < a - tol) or (not maximize and b > a + tol):
                ok = False
                break
        verdict[path.stem] = ok
    return verdict


def write_convergence(run: RunOutput, kind: str) -> dict:
    """Long-format trace table plus the monotonicity self-check."""
    rows = []
    for rid in sorted(run.traces):
        for line in run.traces[rid]:
            rows.append({"run_id": rid, "iteration": line["iteration"], "objective": _fmt(line["objective"])})
    verdict = check_traces(run.out_dir, kind)
    (run.out_dir / "convergence.csv").write_text(_csv_text(("run_id", "iteration", "objective"), rows))
    checks = [{"run_id": k, "monotone": int(v)} for k, v in sorted(verdict.items())]
    (run.out_dir / "selfcheck.csv").write_text(_csv_text(("run_id", "monotone"), checks))
    return verdict
