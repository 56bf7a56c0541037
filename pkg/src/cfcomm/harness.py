"""Experiment configs, report rows and deterministic report rendering.

Configs are flat ``key = value`` text files; CLI flags override file values.
Reports are JSON (sorted keys, shortest round-trip floats) or CSV (``.``
decimal, 17 significant digits). The row layout is documented in
``report_schema.json`` next to this module.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

from .counterfactuality import (
    REMOTE,
    ResourceError,
    build_history_family,
    classify_by_histories,
    crossing_report,
    loss_statistics,
    weak_trace,
)
from .optics import NULL_POSTSELECTION, Light, Region, StructuralError, TerminalKind, run
from .protocols import ACTIONS, Bit, BobAction, Family, build, normalize_action

ANALYSES = ("outcomes", "weaktrace", "histories", "crossing", "loss")
SWEEPABLE = ("outer", "inner", "split")
# M and N as symbols for outer and inner cycle counts
SWEEP_ALIASES = {"m": "outer", "n": "inner"}
OUTPUT_DIR_ENV = "CFCOMM_OUTPUT_DIR"


class UsageError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "salih"
    outer: int | None = None
    inner: int | None = None
    polarized: bool = True
    bob: tuple[str, ...] = ("block", "open")
    light: str = "fock"
    analyses: tuple[str, ...] = ("outcomes",)
    postselect: str | None = None
    epsilon: float = 1e-10
    bs_params: tuple[float, ...] | None = None
    split: float | None = None
    sweep_param: str | None = None
    sweep_values: tuple[float, ...] | None = None
    format: str = "json"
    path: str | None = None
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        try:
            family = Family(self.protocol)
        except ValueError:
            raise UsageError("protocol", f"unknown protocol {self.protocol!r}; choose from {[f.value for f in Family]}")
        if self.light not in ("fock", "classical"):
            raise UsageError("light", f"expected fock or classical, got {self.light!r}")
        for a in self.analyses:
            if a not in ANALYSES:
                raise UsageError("analyses", f"unknown analysis {a!r}; choose from {list(ANALYSES)}")
        if self.format not in ("json", "csv"):
            raise UsageError("output.format", f"expected json or csv, got {self.format!r}")
        if not self.bob:
            raise UsageError("bob", "at least one bob action is required")
        for b in self.bob:
            try:
                normalize_action(family, b)
            except ValueError:
                raise UsageError("bob", f"unknown action {b!r}")
        if self.jobs < 1:
            raise UsageError("jobs", "must be >= 1")
        if self.sweep_param is not None:
            if self.sweep_param not in SWEEPABLE:
                raise UsageError("sweep.param", f"cannot sweep {self.sweep_param!r}; choose from {list(SWEEPABLE)}")
            if not self.sweep_values:
                raise UsageError("sweep.values", "sweep needs at least one value")
            for v in self.sweep_values:
                self.point(v).protocol_params()
        else:
            self.protocol_params()
        return self

    def point(self, value: float) -> "ExperimentConfig":
        if self.sweep_param in ("outer", "inner"):
            if float(value) != int(value):
                raise UsageError("sweep.values", f"{self.sweep_param} must be an integer, got {value!r}")
            value = int(value)
        return replace(self, sweep_param=None, sweep_values=None, **{self.sweep_param: value})

    def protocol_params(self) -> dict[str, Any]:
        family = Family(self.protocol)
        if family is Family.SALIH:
            m = 2 if self.outer is None else self.outer
            n = 2 if self.inner is None else self.inner
            if m < 1:
                raise UsageError("outer", f"salih needs outer >= 1, got {m}")
            if n < 2:
                raise UsageError("inner", f"salih needs inner >= 2, got {n}")
            return {"M": m, "N": n, "polarized": self.polarized}
        if family is Family.ZENO:
            n = 10 if self.inner is None else self.inner
            if n < 1:
                raise UsageError("inner", f"zeno needs inner >= 1, got {n}")
            return {"N": n}
        if family is Family.VAIDMAN:
            k = 2 if self.inner is None else self.inner
            if k < 2:
                raise UsageError("inner", f"vaidman needs inner >= 2, got {k}")
            if self.bs_params is None:
                raise UsageError("bs_params", "vaidman needs beamsplitter angles (see the tune command)")
            if len(self.bs_params) != 2 + 2 * k:
                raise UsageError("bs_params", f"vaidman with inner={k} needs {2 + 2 * k} angles, got {len(self.bs_params)}")
            return {"inner_count": k, "bs_params": list(self.bs_params)}
        if family is Family.NOH:
            return {} if self.split is None else {"split": self.split}
        if family is Family.NESTED:
            return {} if self.split is None else {"outer_split": self.split}
        return {}

    def actions(self) -> list[BobAction]:
        family = Family(self.protocol)
        out = []
        for b in self.bob:
            a = normalize_action(family, b)
            if a not in out:
                out.append(a)
        return out


def _as_bool(key: str, text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(key, f"expected a boolean, got {text!r}")


def _as_int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise UsageError(key, f"expected an integer, got {text!r}")


def _as_float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise UsageError(key, f"expected a number, got {text!r}")


def _as_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_values(key: str, text: str) -> tuple[float, ...]:
    """Comma list; ``a..b`` expands to the integer range a..b inclusive."""
    out: list[float] = []
    for item in _as_list(text):
        if ".." in item:
            lo, hi = item.split("..", 1)
            lo_i, hi_i = _as_int(key, lo), _as_int(key, hi)
            out.extend(float(v) for v in range(lo_i, hi_i + 1))
        else:
            out.append(_as_float(key, item))
    return tuple(out)


_KEYS = {
    "protocol": ("protocol", str),
    "outer": ("outer", "int"),
    "inner": ("inner", "int"),
    "polarized": ("polarized", "bool"),
    "bob": ("bob", "list"),
    "bomb": ("bob", "list"),
    "light": ("light", str),
    "analyses": ("analyses", "list"),
    "postselect": ("postselect", str),
    "epsilon": ("epsilon", "float"),
    "bs_params": ("bs_params", "floats"),
    "split": ("split", "float"),
    "sweep.param": ("sweep_param", str),
    "sweep.values": ("sweep_values", "values"),
    "output.format": ("format", str),
    "output.path": ("path", str),
    "jobs": ("jobs", "int"),
}


def coerce(key: str, raw: Any) -> tuple[str, Any]:
    if key not in _KEYS:
        raise UsageError(key, "unknown configuration key")
    name, kind = _KEYS[key]
    if not isinstance(raw, str):
        if kind == "list" and isinstance(raw, (list, tuple)):
            return name, tuple(str(x) for x in raw)
        if kind in ("floats", "values") and isinstance(raw, (list, tuple)):
            return name, tuple(float(x) for x in raw)
        return name, raw
    text = raw.strip()
    if kind == "int":
        return name, _as_int(key, text)
    if kind == "float":
        return name, _as_float(key, text)
    if kind == "bool":
        return name, _as_bool(key, text)
    if key == "sweep.param":
        return name, SWEEP_ALIASES.get(text.lower(), text)
    if kind == "list":
        items = _as_list(text)
        if key in ("bob", "bomb") and items == ["both"]:
            return name, ("block", "open")
        return name, tuple(items)
    if kind == "floats":
        return name, tuple(_as_float(key, t) for t in _as_list(text))
    if kind == "values":
        return name, parse_values(key, text)
    return name, text


def parse_config_text(text: str) -> dict[str, Any]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"line {lineno}", f"expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        name, val = coerce(key, value)
        out[name] = val
    return out


def make_config(file_text: str | None = None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    fields: dict[str, Any] = {}
    if file_text:
        fields.update(parse_config_text(file_text))
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        name, val = coerce(key, raw)
        fields[name] = val
    return ExperimentConfig(**fields).validate()


# --- rows --------------------------------------------------------------------


def default_outcome(circuit, mapping, action: BobAction, dist) -> str | None:
    """Terminal decoding to the bit Bob sent, else the mapping's witness, else the likeliest Alice detector."""
    for label in (mapping.terminal_for(action.bit), mapping.witness):
        if label is not None and dist.get(label) > NULL_POSTSELECTION:
            return label
    candidates = [
        (dist.get(l), l)
        for l, ev in circuit.terminals.items()
        if ev.kind is TerminalKind.DETECTOR and ev.region is Region.ALICE and dist.get(l) > NULL_POSTSELECTION
    ]
    if not candidates:
        return None
    candidates.sort(key=lambda t: (-round(t[0], 12), t[1]))
    return candidates[0][1]


def remote_cells(circuit) -> set[str]:
    return {circuit.cell_of(p) for p, r in circuit.regions.items() if r in REMOTE}


def compute_rows(config: ExperimentConfig) -> list[dict[str, Any]]:
    family = Family(config.protocol)
    params = config.protocol_params()
    light = Light(config.light)
    built = {a: build(family, a, **params) for a in config.actions()}
    rows = []
    for action, (circuit, mapping) in built.items():
        dist = run(circuit, light)
        row: dict[str, Any] = {
            "protocol": family.value,
            "params": {k: v for k, v in sorted(params.items())},
            "bob_action": action.value,
            "light": light.value,
            "probabilities": dict(sorted(dist.values.items())),
        }
        if "outcomes" in config.analyses:
            bits = mapping.bit_probabilities(dist)
            row["bits"] = {b.value: bits[b] for b in Bit}
            row["bob_intensity"] = dist.region_total(Region.BOB, Region.CHANNEL)
            if light is Light.CLASSICAL:
                row["registering"] = dist.registering()
        outcome = config.postselect or default_outcome(circuit, mapping, action, dist)
        if outcome is not None and outcome not in circuit.terminals:
            raise UsageError("postselect", f"no terminal {outcome!r} in {circuit.name}")
        needs_post = {"weaktrace", "histories"} & set(config.analyses) or (
            "crossing" in config.analyses and light is Light.FOCK
        )
        if needs_post:
            if outcome is not None and dist.get(outcome) <= NULL_POSTSELECTION:
                outcome = None
            row["postselect"] = outcome
        if "crossing" in config.analyses:
            if light is Light.CLASSICAL:
                row["crossing"] = crossing_report(circuit, light)
            else:
                row["crossing"] = None if outcome is None else crossing_report(circuit, light, outcome, epsilon=config.epsilon)
        if "weaktrace" in config.analyses:
            row["weaktrace"] = _weaktrace_summary(circuit, outcome, config.epsilon)
        if "histories" in config.analyses:
            row["histories"] = _histories_summary(circuit, outcome)
        rows.append(row)
    if "loss" in config.analyses:
        stats = _loss_summary(family, params)
        for row in rows:
            row["loss"] = stats
    return rows


def _weaktrace_summary(circuit, outcome, epsilon) -> dict[str, Any]:
    if outcome is None:
        return {"verdict": "undefined (null post-selection)", "remote_segments": [], "order": "first"}
    report = weak_trace(circuit, outcome, epsilon=epsilon)
    remote = report.present(REMOTE)
    return {
        "verdict": "Bob-region presence" if remote else "no Bob-region presence",
        "remote_segments": [f"{r.stage}:{r.mode.path}:{r.mode.pol or '-'}" for r in remote],
        "order": report.order,
    }


def _histories_summary(circuit, outcome) -> dict[str, Any]:
    family = build_history_family(circuit)
    verdict = None if outcome is None else classify_by_histories(family, remote_cells(circuit), outcome).value
    return {
        "consistent": family.consistent,
        "verdict": verdict,
        "count": len(family.histories),
        "max_offdiag_real": float(family.max_offdiag_real),
        "cuts": [int(c) for c in family.cuts],
    }


def _loss_summary(family: Family, params) -> dict[str, float] | None:
    block, other = ACTIONS[family]
    cb, mapping = build(family, block, **params)
    co, _ = build(family, other, **params)
    stats = loss_statistics((cb, co), mapping)
    return {"p_loss_block": stats.p_loss_block, "p_loss_open": stats.p_loss_open, "leakage_bits": stats.leakage_bits}


def _rows_for_value(args):
    config, value = args
    point = config.point(value)
    return point, compute_rows(point)


def sweep_rows(config: ExperimentConfig) -> list[dict[str, Any]]:
    """Rows for every sweep point, in sweep-value order regardless of ``jobs``."""
    work = [(config, v) for v in config.sweep_values]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_rows_for_value, work))
    else:
        results = [_rows_for_value(w) for w in work]
    rows = []
    for (point, point_rows), value in zip(results, config.sweep_values):
        for r in point_rows:
            r["sweep"] = {"param": config.sweep_param, "value": getattr(point, config.sweep_param)}
            rows.append(r)
    return rows


def numeric_columns(row: Mapping[str, Any]) -> dict[str, float]:
    out = {f"p[{k}]": v for k, v in row["probabilities"].items()}
    for b, v in row.get("bits", {}).items():
        out[f"bit[{b}]"] = v
    for key in ("bob_intensity", "crossing"):
        if isinstance(row.get(key), (int, float)):
            out[key] = float(row[key])
    return out


def trend(values: Sequence[float], tol: float = 1e-12) -> dict[str, Any]:
    diffs = [b - a for a, b in zip(values, values[1:])]
    if not diffs or all(abs(d) <= tol for d in diffs):
        direction = "constant"
    elif all(d > -tol for d in diffs):
        direction = "increasing"
    elif all(d < tol for d in diffs):
        direction = "decreasing"
    else:
        direction = "mixed"
    strict = bool(diffs) and (all(d > 0 for d in diffs) or all(d < 0 for d in diffs))
    return {
        "direction": direction,
        "strict": strict,
        "first": values[0],
        "last": values[-1],
        "asymptote": _aitken(values),
    }


def _aitken(values: Sequence[float]) -> float:
    """Aitken delta-squared estimate from the last three points, else the last value."""
    if len(values) < 3:
        return values[-1]
    x0, x1, x2 = values[-3:]
    denom = x2 - 2 * x1 + x0
    if abs(denom) < 1e-15:
        return x2
    est = x2 - (x2 - x1) ** 2 / denom
    return est if math.isfinite(est) else x2


def sweep_summary(rows: Sequence[Mapping[str, Any]]) -> dict[str, Any]:
    """Trend per numeric column and Bob action, over columns present at every point."""
    by_action: dict[str, list[Mapping[str, Any]]] = {}
    for r in rows:
        by_action.setdefault(r["bob_action"], []).append(r)
    out = {}
    for action, group in by_action.items():
        cols = [numeric_columns(r) for r in group]
        shared = sorted(set.intersection(*(set(c) for c in cols))) if cols else []
        out[action] = {name: trend([c[name] for c in cols]) for name in shared}
    return out


# --- rendering -----------------------------------------------------------------


def render_json(payload: Mapping[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt_float(v)
    if isinstance(v, int):
        return str(v)
    if isinstance(v, Mapping):
        return ";".join(f"{k}={_cell(x)}" for k, x in v.items())
    if isinstance(v, (list, tuple)):
        return "|".join(_cell(x) for x in v)
    return str(v)


def csv_columns(analyses: Iterable[str], sweep: bool = False) -> list[str]:
    analyses = set(analyses)
    cols = ["protocol", "params", "bob_action", "light"]
    if sweep:
        cols += ["sweep_param", "sweep_value"]
    cols.append("probabilities")
    if "outcomes" in analyses:
        cols += ["p_bit0", "p_bit1", "p_abort", "p_undefined", "bob_intensity"]
    if analyses & {"weaktrace", "histories", "crossing"}:
        cols.append("postselect")
    if "crossing" in analyses:
        cols.append("crossing")
    if "weaktrace" in analyses:
        cols += ["weaktrace_verdict", "weaktrace_remote_segments"]
    if "histories" in analyses:
        cols += ["histories_consistent", "histories_verdict", "histories_count", "histories_max_offdiag_real"]
    if "loss" in analyses:
        cols += ["p_loss_block", "p_loss_open", "leakage_bits"]
    return cols


def flatten_row(row: Mapping[str, Any]) -> dict[str, Any]:
    flat: dict[str, Any] = {k: row.get(k) for k in ("protocol", "params", "bob_action", "light", "probabilities")}
    if "sweep" in row:
        flat["sweep_param"] = row["sweep"]["param"]
        flat["sweep_value"] = row["sweep"]["value"]
    if "bits" in row:
        for key, b in (("p_bit0", "0"), ("p_bit1", "1"), ("p_abort", "abort"), ("p_undefined", "undefined")):
            flat[key] = row["bits"][b]
        flat["bob_intensity"] = row["bob_intensity"]
    for key in ("postselect", "crossing"):
        if key in row:
            flat[key] = row[key]
    if "weaktrace" in row:
        flat["weaktrace_verdict"] = row["weaktrace"]["verdict"]
        flat["weaktrace_remote_segments"] = row["weaktrace"]["remote_segments"]
    if "histories" in row:
        h = row["histories"]
        flat.update(
            histories_consistent=h["consistent"],
            histories_verdict=h["verdict"],
            histories_count=h["count"],
            histories_max_offdiag_real=h["max_offdiag_real"],
        )
    if row.get("loss"):
        flat.update(row["loss"])
    return flat


def render_csv(rows: Sequence[Mapping[str, Any]], analyses: Iterable[str], sweep: bool = False) -> str:
    cols = csv_columns(analyses, sweep)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        flat = flatten_row(row)
        writer.writerow([_cell(flat.get(c)) for c in cols])
    return buf.getvalue()


def config_record(config: ExperimentConfig) -> dict[str, Any]:
    rec = asdict(config)
    rec.pop("path")
    rec.pop("jobs")
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in rec.items()}


def output_target(config_path: str | None, command: str, protocol: str, fmt: str) -> str | None:
    if config_path:
        return config_path
    directory = os.environ.get(OUTPUT_DIR_ENV)
    if directory:
        return os.path.join(directory, f"{command}-{protocol}.{fmt}")
    return None


def report_schema() -> dict[str, Any]:
    return json.loads(resources.files("cfcomm").joinpath("report_schema.json").read_text())
