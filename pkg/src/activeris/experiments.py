"""Seeded Monte Carlo driver for the simulation sweeps.

An experiment spec is a TOML file::

    experiment = "sumrate_vs_budget"
    seed = 2024
    trials = 100
    schemes = ["srb", "srb_no_zs", "rb", "passive"]

    [scenario]            # ScenarioConfig overrides
    Q1 = 4
    Q2 = 4

    [sweep]               # one list per swept ScenarioConfig field
    p_ris_budget_dbm = [0, 5, 10, 15, 20]

    [params]              # experiment-specific knobs (nulling_prob only)
    gain_ratio_db = 20.0

Each trial index draws its channels from its own stream, independent of the
sweep point, so schemes and sweep points are paired on the same
realizations.  Rows are sorted by (sweep point, trial, scheme) before they
are written, which makes the output independent of the worker count.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .nulling import min_interference_qcqp
from .powermin import check_feasible, powermin_baseline, powermin_sparse
from .scenario import ScenarioConfig, sample_channels, sample_iid_setup, sample_surface, trial_rng
from .sumrate import (SolverError, passive_count, sumrate_baseline, sumrate_one_loop,
                      sumrate_two_loop, zero_setting)
from .system_model import PowerKind, PowerModel, achievable_rates, power_consumption


class SpecError(ValueError):
    """Malformed experiment spec; ``line``/``column`` are set for TOML syntax errors."""

    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


# --------------------------------------------------------------------------
# schemas
# --------------------------------------------------------------------------

SUMRATE_COLUMNS = ["trial", "scheme", "status", "feasible", "sum_rate", "power_w",
                   "active_res", "iterations"]
POWERMIN_COLUMNS = ["trial", "rate_req_bps_hz", "scheme", "feasible", "power_w", "active_res",
                    "dca_iters", "outer_iters"]

SCHEMAS = {
    "nulling_prob": ["q", "alpha_max_sq_db", "trial", "residual_power", "success"],
    "nulling_prob_summary": ["q", "alpha_max_sq_db", "success_prob", "trials"],
    "sumrate_convergence": ["trial", "scheme", "iteration", "sum_rate"],
    "sumrate_vs_pk": ["p_k_dbm"] + SUMRATE_COLUMNS,
    "sumrate_vs_budget": ["p_ris_budget_dbm"] + SUMRATE_COLUMNS,
    "powermin_success": ["alpha_max_sq_db"] + POWERMIN_COLUMNS,
    "powermin_power": ["p_bias_dbm"] + POWERMIN_COLUMNS,
}

# sweep axes the experiment varies, in CSV column order
AXES = {
    "nulling_prob": ("q", "alpha_max_sq_db"),
    "sumrate_convergence": (),
    "sumrate_vs_pk": ("p_k_dbm",),
    "sumrate_vs_budget": ("p_ris_budget_dbm",),
    "powermin_success": ("alpha_max_sq_db", "rate_req_bps_hz"),
    "powermin_power": ("p_bias_dbm", "rate_req_bps_hz"),
}

SCHEMES = {
    "nulling_prob": (),
    "sumrate_convergence": ("one_loop", "two_loop"),
    "sumrate_vs_pk": ("srb", "srb_no_zs", "two_loop", "rb", "passive"),
    "sumrate_vs_budget": ("srb", "srb_no_zs", "two_loop", "rb", "passive"),
    "powermin_success": ("active", "passive"),
    "powermin_power": ("srb", "rb"),
}

DEFAULT_SCHEMES = {
    "sumrate_convergence": ["one_loop", "two_loop"],
    "sumrate_vs_pk": ["srb", "srb_no_zs", "rb", "passive"],
    "sumrate_vs_budget": ["srb", "srb_no_zs", "rb", "passive"],
    "powermin_success": ["active", "passive"],
    "powermin_power": ["srb", "rb"],
}

DEFAULT_PARAMS = {
    "nulling_prob": {"K": 4, "gain_ratio_db": 20.0, "snr_db": 10.0, "threshold": 1e-3},
}


@dataclass
class ExperimentSpec:
    experiment: str
    scenario: ScenarioConfig
    sweep: dict
    trials: int = 100
    seed: int = 0
    schemes: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    out_dir: str = "results"

    def __post_init__(self):
        if self.experiment not in SCHEMAS:
            raise SpecError(f"unknown experiment {self.experiment!r}")
        if self.trials < 1:
            raise SpecError("trials must be >= 1")
        for axis in AXES[self.experiment]:
            vals = self.sweep.get(axis)
            if not vals:
                raise SpecError(f"sweep axis {axis!r} must be a nonempty list")
        extra = set(self.sweep) - set(AXES[self.experiment])
        if extra:
            raise SpecError(f"{self.experiment} does not sweep {sorted(extra)}")
        bad = [s for s in self.schemes if s not in SCHEMES[self.experiment]]
        if bad:
            raise SpecError(f"unknown schemes {bad} for {self.experiment}")

    def points(self) -> list:
        """Cartesian product of the sweep axes, first axis slowest."""
        out = [{}]
        for axis in AXES[self.experiment]:
            out = [dict(p, **{axis: v}) for p in out for v in self.sweep[axis]]
        return out

    def resolved(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed, "trials": self.trials,
                "schemes": list(self.schemes), "sweep": self.sweep, "params": self.params,
                "scenario": self.scenario.to_dict(), "out_dir": self.out_dir}


def parse_spec(text: str, overrides: dict | None = None) -> ExperimentSpec:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        raise SpecError(f"spec parse error: {getattr(exc, 'msg', exc)}", line, col) from None
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    raw.update(overrides)
    try:
        experiment = raw.pop("experiment")
    except KeyError:
        raise SpecError("missing key 'experiment'") from None
    scen = dict(raw.pop("scenario", {}))
    sweep = {k: list(v) if isinstance(v, list) else [v] for k, v in raw.pop("sweep", {}).items()}
    if "tolerances" in scen:
        scen["tolerances"] = dict(scen["tolerances"])
    try:
        scenario = ScenarioConfig.from_dict(scen)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"bad [scenario] table: {exc}") from None
    params = dict(DEFAULT_PARAMS.get(experiment, {}))
    params.update(raw.pop("params", {}))
    out = raw.pop("out_dir", "results")
    spec = ExperimentSpec(experiment=experiment, scenario=scenario, sweep=sweep,
                          trials=int(raw.pop("trials", 100)), seed=int(raw.pop("seed", 0)),
                          schemes=list(raw.pop("schemes", DEFAULT_SCHEMES.get(experiment, []))),
                          params=params, out_dir=out)
    if raw:
        raise SpecError(f"unknown top-level keys {sorted(raw)}")
    return spec


def load_spec(path, overrides: dict | None = None) -> ExperimentSpec:
    return parse_spec(Path(path).read_text(), overrides)


# --------------------------------------------------------------------------
# per-trial workers
# --------------------------------------------------------------------------

def _config_at(spec: ExperimentSpec, point: dict) -> ScenarioConfig:
    changes = {}
    for k, v in point.items():
        if k == "p_k_dbm":
            changes[k] = (float(v),) * spec.scenario.K
        elif k == "rate_req_bps_hz":
            changes[k] = (float(v),) * spec.scenario.K
        elif k != "q":
            changes[k] = float(v)
    return spec.scenario.replace(**changes) if changes else spec.scenario


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _nulling_rows(spec, trial):
    p = spec.params
    K = int(p["K"])
    q_list = sorted(int(q) for q in spec.sweep["q"])
    powers = np.full(K, 10 ** (p["snr_db"] / 10))
    full = sample_iid_setup(q_list[-1], K, p["gain_ratio_db"], trial_rng(spec.seed, trial))
    rows = []
    for q in spec.sweep["q"]:
        ch = full.subset(np.arange(int(q)))
        for adb in spec.sweep["alpha_max_sq_db"]:
            _, res = min_interference_qcqp(ch, powers, 10 ** (adb / 20))
            rows.append({"q": int(q), "alpha_max_sq_db": float(adb), "trial": trial,
                         "residual_power": res, "success": bool(res <= p["threshold"])})
    return rows


def _sumrate_row(trial, scheme, rep, power=None):
    return {"trial": trial, "scheme": scheme, "status": rep.status, "feasible": rep.feasible,
            "sum_rate": rep.sum_rate if rep.feasible else float("nan"),
            "power_w": rep.power_w if power is None else power,
            "active_res": rep.active_res, "iterations": rep.iterations}


def _failed_row(trial, scheme, exc):
    return {"trial": trial, "scheme": scheme, "status": f"error:{type(exc).__name__}",
            "feasible": False, "sum_rate": float("nan"), "power_w": float("nan"),
            "active_res": 0, "iterations": 0}


def _sumrate_trial(spec, point, trial):
    config = _config_at(spec, point)
    ch = sample_channels(config, trial_rng(spec.seed, trial))
    rows = []
    schemes = spec.schemes
    if {"srb", "srb_no_zs"} & set(schemes):
        try:
            rep = sumrate_one_loop(ch, config)
            if "srb" in schemes:
                a = zero_setting(rep.a, config.tolerances.zero_set_amp_threshold)
                noises = (config.sigma_r_sq_w, config.sigma_s_sq_w)
                model = PowerModel.from_config(config, PowerKind.ACTIVE_SPARSE)
                zs = dataclasses.replace(
                    rep, a=a, rates=achievable_rates(a, ch, config.powers_w, noises),
                    active_res=int(np.count_nonzero(a)),
                    power_w=power_consumption(a, ch, config.powers_w, model, config.sigma_r_sq_w))
                rows.append(_sumrate_row(trial, "srb", zs))
            if "srb_no_zs" in schemes:
                rows.append(_sumrate_row(trial, "srb_no_zs", rep))
        except (SolverError, RuntimeError) as exc:
            rows += [_failed_row(trial, s, exc) for s in ("srb", "srb_no_zs") if s in schemes]
    runners = {
        "two_loop": lambda: sumrate_two_loop(ch, config),
        "rb": lambda: sumrate_baseline(ch, config, "fixed_active"),
        "passive": lambda: sumrate_baseline(
            sample_surface(config, ch, passive_count(config), trial_rng(spec.seed, trial, 1)),
            config, "passive_upper"),
    }
    for scheme in schemes:
        if scheme in runners:
            try:
                rows.append(_sumrate_row(trial, scheme, runners[scheme]()))
            except (SolverError, RuntimeError) as exc:
                rows.append(_failed_row(trial, scheme, exc))
    for r in rows:
        r.update(point)
    return rows


def _convergence_trial(spec, point, trial):
    config = _config_at(spec, point)
    ch = sample_channels(config, trial_rng(spec.seed, trial))
    rows = []
    for scheme in spec.schemes:
        fn = sumrate_one_loop if scheme == "one_loop" else sumrate_two_loop
        try:
            traj = fn(ch, config).trajectory
        except (SolverError, RuntimeError):
            traj = [float("nan")]
        rows += [{"trial": trial, "scheme": scheme, "iteration": i, "sum_rate": r}
                 for i, r in enumerate(traj)]
    return rows


def _powermin_row(trial, point, scheme, rep):
    row = {"trial": trial, "scheme": scheme, "feasible": rep.feasible,
           "power_w": rep.power_w if rep.feasible else float("nan"),
           "active_res": rep.active_res if rep.feasible else 0,
           "dca_iters": rep.iterations, "outer_iters": rep.outer_iters}
    row.update(point)
    return row


def _powermin_trial(spec, point, trial):
    config = _config_at(spec, point)
    ch = sample_channels(config, trial_rng(spec.seed, trial))
    rows = []
    for scheme in spec.schemes:
        if spec.experiment == "powermin_success":
            ok = check_feasible(ch, config, "passive" if scheme == "passive" else "active")
            row = {"trial": trial, "scheme": scheme, "feasible": ok, "power_w": float("nan"),
                   "active_res": 0, "dca_iters": 0, "outer_iters": 0}
            row.update(point)
            rows.append(row)
            continue
        if scheme == "srb":
            rep = powermin_sparse(ch, config)
        else:
            rep = powermin_baseline(ch, config, "fully_active")
        rows.append(_powermin_row(trial, point, scheme, rep))
    return rows


def _run_task(args):
    spec, point, trial = args
    if spec.experiment == "nulling_prob":
        return _nulling_rows(spec, trial)
    if spec.experiment == "sumrate_convergence":
        return _convergence_trial(spec, point, trial)
    if spec.experiment.startswith("sumrate"):
        return _sumrate_trial(spec, point, trial)
    return _powermin_trial(spec, point, trial)


def tasks(spec: ExperimentSpec) -> list:
    """(spec, point, trial) work units; nulling trials cover every point at once."""
    if spec.experiment == "nulling_prob":
        return [(spec, {}, t) for t in range(spec.trials)]
    return [(spec, p, t) for p in spec.points() for t in range(spec.trials)]


# --------------------------------------------------------------------------
# running and writing
# --------------------------------------------------------------------------

def _sort_key(spec):
    axes = AXES[spec.experiment]
    order = {s: i for i, s in enumerate(spec.schemes)}

    def key(row):
        return (tuple(row[a] for a in axes), row["trial"], order.get(row.get("scheme"), 0),
                row.get("iteration", 0))
    return key


def run_rows(spec: ExperimentSpec, workers: int = 1) -> list:
    work = tasks(spec)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_task, work))
    else:
        chunks = [_run_task(w) for w in work]
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=_sort_key(spec))
    return rows


def nulling_summary(spec: ExperimentSpec, rows: list) -> list:
    table = {}
    for r in rows:
        table.setdefault((r["q"], r["alpha_max_sq_db"]), []).append(r["success"])
    return [{"q": q, "alpha_max_sq_db": a, "success_prob": float(np.mean(v)), "trials": len(v)}
            for (q, a), v in sorted(table.items())]


def csv_text(columns: list, rows: list, config_echo: dict | None = None) -> str:
    buf = io.StringIO()
    if config_echo is not None:
        buf.write("# config " + json.dumps(config_echo, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def spec_hash(text: str) -> str:
    """Content hash in the style of a git blob id."""
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def run_experiment(spec: ExperimentSpec, out_dir=None, workers: int = 1,
                   spec_text: str | None = None) -> dict:
    """Run every trial and write the CSV files and a JSON manifest.

    Returns the manifest.
    """
    out = Path(out_dir if out_dir is not None else spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_rows(spec, workers)
    echo = spec.resolved()
    echo.pop("out_dir")
    files = {}
    name = spec.experiment
    files[f"{name}.csv"] = csv_text(SCHEMAS[name], rows, echo)
    if name == "nulling_prob":
        files[f"{name}_summary.csv"] = csv_text(SCHEMAS["nulling_prob_summary"],
                                                nulling_summary(spec, rows), echo)
    for fname, text in files.items():
        (out / fname).write_text(text)
    manifest = {
        "experiment": name,
        "config": echo,
        "spec_hash": spec_hash(spec_text) if spec_text is not None else None,
        "outputs": {f: {"rows": t.count("\n") - 2, "sha256": hashlib.sha256(t.encode()).hexdigest()}
                    for f, t in files.items()},
        "package_version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "workers": workers,
    }
    (out / f"{name}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# --------------------------------------------------------------------------
# summaries
# --------------------------------------------------------------------------

VALUE_COLUMNS = ("residual_power", "sum_rate", "power_w", "active_res", "iterations",
                 "dca_iters", "outer_iters")
FLAG_COLUMNS = ("success", "feasible")


def read_csv(path) -> tuple:
    """Returns ``(schema_name, rows)``; raises SpecError on an unknown header."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        raise SpecError(f"{path}: empty file")
    reader = csv.DictReader(lines)
    header = reader.fieldnames
    for name, cols in SCHEMAS.items():
        if header == cols:
            return name, list(reader)
    raise SpecError(f"{path}: header {header} matches no known schema")


def _num(v):
    if v in ("true", "false"):
        return 1.0 if v == "true" else 0.0
    return float(v)


def summarize_rows(schema: str, rows: list) -> tuple:
    """Mean and Monte Carlo standard error per sweep point (and scheme).

    The boolean ``success`` / ``feasible`` column becomes ``success_prob``.  With two or more schemes, each row
    also carries the mean/stderr of the paired difference (same trial) against
    the first scheme listed in the file.
    """
    cols = SCHEMAS[schema]
    if schema == "nulling_prob_summary":
        return cols, rows
    keys = [c for c in cols if c not in VALUE_COLUMNS + FLAG_COLUMNS
            and c not in ("trial", "status", "iteration")]
    values = [c for c in cols if c in VALUE_COLUMNS]
    flags = [c for c in cols if c in FLAG_COLUMNS]
    if schema == "sumrate_convergence":
        keys = ["scheme", "iteration"]
        values = ["sum_rate"]
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    schemes = list(dict.fromkeys(r["scheme"] for r in rows)) if "scheme" in cols else []
    ref = schemes[0] if len(schemes) > 1 else None
    paired_col = values[0] if values else None
    out_cols = keys + ["n"]
    for v in values:
        out_cols += [f"{v}_mean", f"{v}_stderr"]
    for f in flags:
        out_cols += ["success_prob", "success_stderr"]
    if ref is not None and paired_col:
        out_cols += [f"{paired_col}_diff_vs_{ref}_mean", f"{paired_col}_diff_vs_{ref}_stderr"]
    by_trial = {}
    if ref is not None and paired_col:
        for r in rows:
            other = tuple(r[k] for k in keys if k != "scheme")
            by_trial[(other, r["scheme"], r["trial"])] = _num(r[paired_col])
    table = []
    for gkey, grp in groups.items():
        row = dict(zip(keys, gkey))
        row["n"] = len(grp)
        for v in values:
            m, s = _mean_stderr([_num(r[v]) for r in grp])
            row[f"{v}_mean"], row[f"{v}_stderr"] = m, s
        for f in flags:
            m, s = _mean_stderr([_num(r[f]) for r in grp])
            row["success_prob"], row["success_stderr"] = m, s
        if ref is not None and paired_col:
            other = tuple(row[k] for k in keys if k != "scheme")
            diffs = [by_trial[(other, row["scheme"], r["trial"])]
                     - by_trial.get((other, ref, r["trial"]), float("nan")) for r in grp]
            m, s = _mean_stderr(diffs)
            row[f"{paired_col}_diff_vs_{ref}_mean"] = m
            row[f"{paired_col}_diff_vs_{ref}_stderr"] = s
        table.append(row)
    return out_cols, table


def _mean_stderr(xs):
    x = np.asarray([v for v in xs if not math.isnan(v)], float)
    if x.size == 0:
        return float("nan"), float("nan")
    if x.size == 1:
        return float(x[0]), 0.0
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def summarize(path) -> str:
    schema, rows = read_csv(path)
    cols, table = summarize_rows(schema, rows)
    return csv_text(cols, table)


# --------------------------------------------------------------------------
# templates
# --------------------------------------------------------------------------

TEMPLATES = {
    "nulling_prob": '''experiment = "nulling_prob"
seed = 2024
trials = 200

[params]
K = 4
gain_ratio_db = 20.0
snr_db = 10.0
threshold = 1e-3

[sweep]
q = [8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20]
alpha_max_sq_db = [0, 10, 20, 30]
''',
    "sumrate_convergence": '''experiment = "sumrate_convergence"
seed = 2024
trials = 10
schemes = ["one_loop", "two_loop"]

[scenario]
Q1 = 8
Q2 = 8
p_ris_budget_dbm = 10.0
p_k_dbm = 23.0
''',
    "sumrate_vs_pk": '''experiment = "sumrate_vs_pk"
seed = 2024
trials = 100
schemes = ["srb", "srb_no_zs", "rb", "passive"]

[scenario]
Q1 = 4
Q2 = 4
p_ris_budget_dbm = 10.0

[sweep]
p_k_dbm = [10, 15, 20, 25, 30]
''',
    "sumrate_vs_budget": '''experiment = "sumrate_vs_budget"
seed = 2024
trials = 100
schemes = ["srb", "srb_no_zs", "rb", "passive"]

[scenario]
Q1 = 4
Q2 = 4
p_k_dbm = 23.0

[sweep]
p_ris_budget_dbm = [0, 5, 10, 15, 20]
''',
    "powermin_success": '''experiment = "powermin_success"
seed = 2024
trials = 100
schemes = ["active", "passive"]

[scenario]
Q1 = 8
Q2 = 4
p_k_dbm = 23.0

[sweep]
alpha_max_sq_db = [10]
rate_req_bps_hz = [0.4, 0.8, 1.2, 1.6, 1.9]
''',
    "powermin_power": '''experiment = "powermin_power"
seed = 2024
trials = 100
schemes = ["srb", "rb"]

[scenario]
Q1 = 8
Q2 = 4
p_k_dbm = 23.0
alpha_max_sq_db = 30.0

[sweep]
p_bias_dbm = [-6]
rate_req_bps_hz = [0.5, 1.0, 1.5, 2.0]
''',
}


def template(experiment: str) -> str:
    try:
        return TEMPLATES[experiment]
    except KeyError:
        raise SpecError(f"unknown experiment {experiment!r}; choose from {sorted(TEMPLATES)}") \
            from None


def default_workers() -> int:
    return max(1, min(os.cpu_count() or 1, 8))
