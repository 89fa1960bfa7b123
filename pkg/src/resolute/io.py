"""Configuration files, CSV/JSON serialization and atomic writes.

Configuration is INI text with fixed sections.  Every dimensional key carries
its unit as a suffix (``_us``, ``_us2``, ``_khz``); the parser converts to SI
when domain objects are built.  Output files start with ``#`` metadata lines
holding the schema version, the seed and a one-line JSON echo of the full
effective configuration, so every file is self-describing.
"""

from __future__ import annotations

import configparser
import json
import math
import os
import re
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .core import (
    TWO_PI,
    DcTerms,
    NoiseParams,
    SensorParams,
    SequenceParams,
    TargetSpin,
    ToneSignal,
    ValidationError,
)
from .simulate import SimConfig, Sweep, Trace

SCHEMA_VERSION = 1
OUT_DIR_ENV = "RESOLUTE_OUT_DIR"
UNIT_SUFFIXES = ("us2", "us", "khz", "g", "rad")


class ConfigError(ValueError):
    """Invalid configuration text; carries the 1-based line and column."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line, self.column = line, column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


# section -> key -> (kind, default); kinds: float, int, str, bool, floats, phases
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "sensor": {
        "t1_us": ("float", 1000.0),
        "t2star_us": ("float", 0.38),
        "t2hahn_us": ("float", 4.3),
        "t2p_us": ("float", 5.1),
        "contrast": ("float", 1.0),
        "overhead_us": ("float", 3.0),
    },
    "sequence": {
        "tau_us": ("float", 6.0),
        "tcorr_us": ("float", 100.0),
        "n_reps": ("int", 400),
    },
    "tone": {
        "freq_khz": ("floats", ()),
        "amplitude_khz": ("floats", ()),
        "phase_rad": ("phases", ()),
    },
    "dc": {
        "detuning_khz": ("float", 0.0),
        "hyperfine_khz": ("float", 0.0),
        "dipolar_khz": ("float", 0.0),
    },
    "noise": {
        "alpha_corr_us2": ("float", 0.14520614252134112),
        "alpha_fast_us2": ("float", 6.5025),
    },
    "sweep": {
        "axis": ("str", "tcorr"),
        "start_us": ("float", 10.0),
        "stop_us": ("float", 210.0),
        "n_points": ("int", 201),
    },
    "run": {
        "seed": ("int", 0),
        "shots_per_block": ("int", 100),
        "protocol": ("str", "resolute"),
        "exact_probabilities": ("bool", False),
    },
    "fisher": {
        # 159.15... kHz is one radian per microsecond
        "amplitude_khz": ("float", 1e3 / TWO_PI),
        "n_sequences": ("int", 500),
        "n_phi": ("int", 64),
        "freq_start_khz": ("float", 0.05),
        "freq_stop_khz": ("float", 2000.0),
        "n_freq": ("int", 200),
        "rayleigh_scale": ("float", 0.25),
        "rayleigh_power": ("float", 2.0),
    },
    "target": {
        "larmor_khz": ("float", 0.0),
        "dipolar_khz": ("float", 600.0),
        "sigma_khz": ("float", 15e3 / 2.355),
        "rabi_khz": ("float", 1e3 / (2 * 0.44)),
        "p_flip": ("float", 1.0),
    },
    "chirp": {
        "tp_us": ("float", 2.0),
        "q": ("float", 5.0),
        "span_khz": ("float", 0.0),  # 0 means: derive the span from q
        "center_khz": ("float", 0.0),
        "q_list": ("floats", (1.0, 2.0, 5.0, 10.0, 20.0)),
        "pi_us": ("float", 0.44),
    },
}


def _stem(key: str) -> str:
    parts = key.rsplit("_", 1)
    return parts[0] if len(parts) == 2 and parts[1] in UNIT_SUFFIXES else key


def _locate(text: str, section: str | None, key: str | None) -> tuple[int | None, int | None]:
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        head = re.match(r"\[\s*([^\]]+?)\s*\]", stripped)
        if head:
            current = head.group(1).lower()
            if key is None and current == section:
                return lineno, raw.index("[") + 1
            continue
        if key is not None and current == section:
            m = re.match(r"\s*([^=:\s]+)\s*[=:]", raw)
            if m and m.group(1).lower() == key:
                return lineno, m.start(1) + 1
    return None, None


def _parse_value(kind: str, raw: str):
    raw = raw.strip()
    if kind == "float":
        value = float(raw)
        if math.isnan(value):
            raise ValueError("NaN is not allowed")
        return value
    if kind == "int":
        return int(raw)
    if kind == "bool":
        lowered = raw.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "str":
        return raw
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if kind == "floats":
        return tuple(float(s) for s in items)
    if kind == "phases":
        return tuple(None if s.lower() == "random" else float(s) for s in items)
    raise AssertionError(kind)


def _format_value(kind: str, value) -> str:
    if kind == "float":
        return repr(float(value))
    if kind in ("int", "str"):
        return str(value)
    if kind == "bool":
        return "true" if value else "false"
    return ", ".join("random" if v is None else repr(float(v)) for v in value)


def _jsonable(kind: str, value):
    if kind in ("floats", "phases"):
        return list(value)
    return value


@dataclass(frozen=True)
class Config:
    """Typed, defaulted configuration values keyed by section then key."""

    values: Mapping[str, Mapping[str, Any]]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def to_dict(self) -> dict[str, dict[str, Any]]:
        return {s: {k: _jsonable(SCHEMA[s][k][0], v) for k, v in keys.items()}
                for s, keys in self.values.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for key, value in keys.items():
                lines.append(f"{key} = {_format_value(SCHEMA[section][key][0], value)}")
            lines.append("")
        return "\n".join(lines)

    def __eq__(self, other):
        return isinstance(other, Config) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash(self.to_json())

    # --- domain objects ---

    def sensor(self) -> SensorParams:
        s = self.values["sensor"]
        return SensorParams(T1=s["t1_us"] * 1e-6, T2_star=s["t2star_us"] * 1e-6,
                            T2_hahn=s["t2hahn_us"] * 1e-6, T2_p=s["t2p_us"] * 1e-6,
                            contrast=s["contrast"], overhead=s["overhead_us"] * 1e-6)

    def sequence(self) -> SequenceParams:
        s = self.values["sequence"]
        return SequenceParams(s["tau_us"] * 1e-6, s["tcorr_us"] * 1e-6, s["n_reps"])

    def tones(self) -> tuple[ToneSignal, ...]:
        t = self.values["tone"]
        freqs, amps, phases = t["freq_khz"], t["amplitude_khz"], t["phase_rad"]
        if len(amps) != len(freqs):
            raise ValidationError("tone.amplitude_khz needs one entry per tone.freq_khz entry")
        if phases and len(phases) != len(freqs):
            raise ValidationError("tone.phase_rad needs one entry per tone (or none at all)")
        phases = phases or (None,) * len(freqs)
        return tuple(ToneSignal(TWO_PI * 1e3 * a, TWO_PI * 1e3 * f, p)
                     for f, a, p in zip(freqs, amps, phases))

    def dc(self) -> DcTerms:
        d = self.values["dc"]
        return DcTerms(TWO_PI * 1e3 * d["detuning_khz"], TWO_PI * 1e3 * d["hyperfine_khz"],
                       TWO_PI * 1e3 * d["dipolar_khz"])

    def noise(self) -> NoiseParams:
        n = self.values["noise"]
        return NoiseParams(n["alpha_corr_us2"] * 1e-12, n["alpha_fast_us2"] * 1e-12,
                           self.values["run"]["seed"])

    def sweep(self) -> Sweep:
        s = self.values["sweep"]
        return Sweep(s["axis"], s["start_us"] * 1e-6, s["stop_us"] * 1e-6, s["n_points"])

    def target(self) -> TargetSpin:
        t = self.values["target"]
        return TargetSpin(t["larmor_khz"] * 1e3, TWO_PI * 1e3 * t["dipolar_khz"],
                          t["sigma_khz"] * 1e3, t["rabi_khz"] * 1e3)

    def sim_config(self) -> SimConfig:
        run = self.values["run"]
        return SimConfig(self.sensor(), self.sequence(), self.tones(), self.dc(), self.noise(),
                         self.sweep(), run["shots_per_block"], run["exact_probabilities"])

    def with_seed(self, seed: int) -> Config:
        values = {s: dict(k) for s, k in self.values.items()}
        values["run"]["seed"] = int(seed)
        return Config(values)


def default_config() -> Config:
    return Config({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def _check_invariants(cfg: Config, text: str) -> None:
    builders = (("sensor", cfg.sensor), ("sequence", cfg.sequence), ("tone", cfg.tones),
                ("dc", cfg.dc), ("noise", cfg.noise), ("sweep", cfg.sweep), ("target", cfg.target))
    for section, build in builders:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                build()
        except ValidationError as exc:
            line, col = _locate(text, section, None)
            raise ConfigError(f"[{section}] {exc}", line, col) from None
    if cfg.get("run", "protocol") not in ("resolute", "ramsey", "hahn"):
        raise ConfigError("[run] protocol must be resolute, ramsey or hahn",
                          *_locate(text, "run", "protocol"))
    if cfg.get("run", "shots_per_block") < 1:
        raise ConfigError("[run] shots_per_block must be >= 1", *_locate(text, "run", "shots_per_block"))


def parse_config(text: str) -> Config:
    """Parse INI text, reject unknown keys, fill defaults and check invariants."""
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(str(exc).splitlines()[0], line, 1 if line else None) from None
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        name = section.lower()
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", *_locate(text, name, None))
        for key, raw in parser.items(section):
            line, col = _locate(text, name, key)
            if key not in SCHEMA[name]:
                stem = key.rsplit("_", 1)[0]
                matches = [k for k in SCHEMA[name] if _stem(k) in (stem, key)]
                if matches:
                    raise ConfigError(f"wrong unit suffix for {name}.{key}; expected {matches[0]}",
                                      line, col)
                raise ConfigError(f"unknown key {name}.{key}", line, col)
            kind = SCHEMA[name][key][0]
            try:
                values[name][key] = _parse_value(kind, raw)
            except ValueError as exc:
                raise ConfigError(f"type mismatch for {name}.{key} (expected {kind}): {exc}",
                                  line, col) from None
    cfg = Config(values)
    _check_invariants(cfg, text)
    return cfg


def load_config(path: str | os.PathLike | None) -> Config:
    """Read a configuration file; ``None`` gives the defaults."""
    if path is None:
        return default_config()
    return parse_config(Path(path).read_text())


def config_from_json(text: str) -> Config:
    """Rebuild a Config from its JSON echo (for example a file header)."""
    data = json.loads(text)
    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (kind, default) in keys.items():
            raw = data.get(section, {}).get(key, default)
            values[section][key] = tuple(raw) if kind in ("floats", "phases") else raw
    return Config(values)


# --- output ---

def resolve_output(path: str | None, default_name: str) -> Path | None:
    """Explicit path, else ``$RESOLUTE_OUT_DIR/default_name``, else None (stdout)."""
    if path:
        return Path(path)
    out_dir = os.environ.get(OUT_DIR_ENV)
    return Path(out_dir) / default_name if out_dir else None


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _header_lines(meta: Mapping[str, Any]) -> list[str]:
    lines = [f"# schema_version: {SCHEMA_VERSION}"]
    for key in sorted(meta):
        lines.append(f"# {key}: {json.dumps(meta[key], sort_keys=True, separators=(',', ':'))}")
    return lines


def table_to_csv(columns: Mapping[str, Any], meta: Mapping[str, Any]) -> str:
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    lines = _header_lines(meta)
    lines.append(",".join(names))
    for row in zip(*arrays):
        lines.append(",".join(str(int(v)) if isinstance(v, (bool, np.bool_)) else _fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _json_ready(value):
    if isinstance(value, np.ndarray):
        return [_json_ready(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, Mapping):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    return value


def to_json_text(data: Mapping[str, Any]) -> str:
    return json.dumps(_json_ready(data), sort_keys=True, indent=1) + "\n"


def _trace_meta(trace: Trace, config: Config | None, seed: int | None) -> dict[str, Any]:
    meta = {"kind": "trace", "axis": trace.axis, "metadata": _json_ready(trace.metadata)}
    if config is not None:
        meta["config"] = config.to_dict()
    if seed is not None:
        meta["seed"] = int(seed)
    return meta


_ABSCISSA_UNITS = {"freq": "hz"}


def abscissa_column(axis: str) -> str:
    """CSV name of the abscissa: SI value with its unit, e.g. ``tcorr_s``."""
    return f"{axis}_{_ABSCISSA_UNITS.get(axis, 's')}"


def trace_to_csv(trace: Trace, config: Config | None = None, seed: int | None = None) -> str:
    columns = {abscissa_column(trace.axis): trace.x}
    columns.update(trace.columns)
    return table_to_csv(columns, _trace_meta(trace, config, seed))


def trace_to_json(trace: Trace, config: Config | None = None, seed: int | None = None) -> str:
    data = _trace_meta(trace, config, seed)
    data["schema_version"] = SCHEMA_VERSION
    data["x"] = trace.x
    data["columns"] = dict(trace.columns)
    return to_json_text(data)


def write_trace(trace: Trace, path: str | os.PathLike, fmt: str = "csv",
                config: Config | None = None, seed: int | None = None) -> None:
    """Write a trace as CSV (commented header) or JSON; the write is atomic."""
    if fmt == "csv":
        atomic_write_text(path, trace_to_csv(trace, config, seed))
    elif fmt == "json":
        atomic_write_text(path, trace_to_json(trace, config, seed))
    else:
        raise ValidationError("format must be csv or json")


def write_report(data: Mapping[str, Any], path: str | os.PathLike, fmt: str = "json",
                 meta: Mapping[str, Any] | None = None) -> None:
    """Write a report: JSON for nested data, CSV for a table of equal-length columns."""
    if fmt == "json":
        payload = {"schema_version": SCHEMA_VERSION, **(meta or {}), **data}
        atomic_write_text(path, to_json_text(payload))
    elif fmt == "csv":
        atomic_write_text(path, table_to_csv(data, meta or {}))
    else:
        raise ValidationError("format must be csv or json")


def read_csv(path: str | os.PathLike) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Parse a file written by this module into (header metadata, columns)."""
    meta: dict[str, Any] = {}
    header = None
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(": ")
            meta[key] = json.loads(value)
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append([float(v) for v in line.split(",")])
    if header is None:
        raise ValidationError(f"{path}: no header row")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return meta, {name: data[:, k] for k, name in enumerate(header)}


def read_trace(path: str | os.PathLike) -> Trace:
    """Load a trace from CSV or JSON (chosen by file content)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        return Trace(data["axis"], np.array(data["x"], dtype=float),
                     {k: np.array(v, dtype=float) for k, v in data["columns"].items()},
                     data.get("metadata", {}))
    meta, cols = read_csv(path)
    axis = meta.get("axis")
    if axis is None:
        axis = next(iter(cols)).rsplit("_", 1)[0]
    xname = abscissa_column(axis)
    if xname not in cols:
        raise ValidationError(f"{path}: missing abscissa column {xname}")
    x = cols.pop(xname)
    return Trace(axis, x, cols, meta.get("metadata", {}))
