"""Run configuration: strict JSON loading, defaults, validation and digest."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .analysis import BandpassSpec, NoiseBand, SweepSettings, delay_grid
from .dispersion import LorentzianLine, medium_from_lines, uniform_grid
from .gaussian import r_from_db
from .tracesim import SqueezingSpectrum

LABELS = ("reference", "fast", "slow")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


DEFAULTS: dict = {
    "source": {
        "band": [20e3, 3e6],
        "rolloff_fraction": 0.1,
        "table": None,
        "squeezed_joint": "XMinus",
    },
    "medium": {
        "lines": [],
        "mode": "conjugate",
        "offset": 0.0,
        "grid": {"f_min": -200e6, "f_max": 200e6, "points": 40001},
        "edge_tol": 1e-3,
    },
    "acquisition": {
        "length": 1_000_000,
        "sample_period": 0.4e-9,
        "trials": 100,
        "seed": 0,
        "shotnoise_traces": None,
    },
    "analysis": {
        "band": [100e3, 2e6],
        "bandpass": {"highpass_hz": 100e3, "lowpass_3db_hz": 1.75e6},
        "delay_min_ns": -300.0,
        "delay_max_ns": 300.0,
        "delay_step_ns": 0.4,
        "xcorr_max_lag_ns": 500.0,
        "xcorr_mode": "circular",
        "trigger": False,
        "trigger_threshold_db": -2.0,
    },
}

_TOP_KEYS = {"label", "r", "r_db", "source", "medium", "acquisition", "analysis"}
_LINE_KEYS = {"center", "width", "peak_gain"}


def preset_path(label: str) -> Path:
    if label not in LABELS:
        raise ConfigError("label", f"unknown preset {label!r}")
    return Path(str(resources.files("fastlight") / "presets" / f"{label}.json"))


def _merge(path: str, defaults: dict, given: Any) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(path, "expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    out = {}
    for key, dval in defaults.items():
        sub = f"{path}.{key}" if path else key
        if key not in given:
            out[key] = copy.deepcopy(dval)
        elif isinstance(dval, dict):
            out[key] = _merge(sub, dval, given[key])
        else:
            out[key] = given[key]
    return out


def _number(cfg: dict, path: str, *, positive=False, integer=False, minimum=None) -> float:
    node = cfg
    keys = path.split(".")
    for k in keys:
        node = node[k]
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        raise ConfigError(path, "expected a number")
    if integer and not float(node).is_integer():
        raise ConfigError(path, "expected an integer")
    if not math.isfinite(node):
        raise ConfigError(path, "must be finite")
    if positive and not node > 0:
        raise ConfigError(path, "must be > 0")
    if minimum is not None and node < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return node


def _band(cfg: dict, path: str, nyquist: float) -> tuple:
    section, key = path.split(".")
    b = cfg[section][key]
    if not (isinstance(b, list) and len(b) == 2):
        raise ConfigError(path, "expected [f_lo, f_hi]")
    for i, v in enumerate(b):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{path}[{i}]", "expected a finite number")
    if not 0 <= b[0] < b[1]:
        raise ConfigError(path, "must satisfy 0 <= f_lo < f_hi")
    if b[1] >= nyquist:
        raise ConfigError(f"{path}[1]", f"{b[1]:g} Hz is not below Nyquist ({nyquist:g} Hz)")
    return float(b[0]), float(b[1])


def _validate(cfg: dict) -> None:
    if cfg["label"] not in LABELS:
        raise ConfigError("label", f"must be one of {', '.join(LABELS)}")
    r = cfg["r"]
    if isinstance(r, bool) or not isinstance(r, (int, float)) or not math.isfinite(r) or r < 0:
        raise ConfigError("r", "must be a finite number >= 0")

    acq = "acquisition"
    length = _number(cfg, f"{acq}.length", integer=True, minimum=2)
    if int(length) % 2:
        raise ConfigError(f"{acq}.length", "must be even")
    dt = _number(cfg, f"{acq}.sample_period", positive=True)
    _number(cfg, f"{acq}.trials", integer=True, minimum=1)
    _number(cfg, f"{acq}.seed", integer=True, minimum=0)
    if cfg[acq]["seed"] >= 2**64:
        raise ConfigError(f"{acq}.seed", "must fit in 64 bits")
    if cfg[acq]["shotnoise_traces"] is not None:
        _number(cfg, f"{acq}.shotnoise_traces", integer=True, minimum=1)
    nyq = 0.5 / dt

    src = cfg["source"]
    _band(cfg, "source.band", nyq)
    _number(cfg, "source.rolloff_fraction", minimum=0)
    if not src["rolloff_fraction"] < 1:
        raise ConfigError("source.rolloff_fraction", "must be < 1")
    if src["squeezed_joint"] not in ("XMinus", "YPlus"):
        raise ConfigError("source.squeezed_joint", "must be XMinus or YPlus")
    if src["table"] is not None:
        t = src["table"]
        if not (isinstance(t, dict) and set(t) == {"freq_hz", "r"}):
            raise ConfigError("source.table", "expected {freq_hz: [...], r: [...]}")
        try:
            SqueezingSpectrum(r=0.0, band=tuple(src["band"]), table=(t["freq_hz"], t["r"]))
        except (ValueError, TypeError) as exc:
            raise ConfigError("source.table", str(exc)) from None

    med = cfg["medium"]
    if med["mode"] not in ("probe", "conjugate"):
        raise ConfigError("medium.mode", "must be probe or conjugate")
    _number(cfg, "medium.offset")
    _number(cfg, "medium.edge_tol", positive=True)
    _number(cfg, "medium.grid.f_min")
    _number(cfg, "medium.grid.f_max")
    _number(cfg, "medium.grid.points", integer=True, minimum=3)
    if not med["grid"]["f_max"] > med["grid"]["f_min"]:
        raise ConfigError("medium.grid.f_max", "must exceed f_min")
    if not isinstance(med["lines"], list):
        raise ConfigError("medium.lines", "expected a list")
    for i, line in enumerate(med["lines"]):
        p = f"medium.lines[{i}]"
        if not isinstance(line, dict):
            raise ConfigError(p, "expected an object")
        if set(line) != _LINE_KEYS:
            extra = sorted(set(line) ^ _LINE_KEYS)
            raise ConfigError(f"{p}.{extra[0]}", "unknown or missing key")
        for k in sorted(_LINE_KEYS):
            v = line[k]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{p}.{k}", "expected a finite number")
        try:
            LorentzianLine(**line)
        except ValueError as exc:
            raise ConfigError(p, str(exc)) from None
        if not med["grid"]["f_min"] < line["center"] < med["grid"]["f_max"]:
            raise ConfigError(f"{p}.center", "outside the medium grid")

    an = cfg["analysis"]
    _band(cfg, "analysis.band", nyq)
    hp = _number(cfg, "analysis.bandpass.highpass_hz", minimum=0)
    lp = _number(cfg, "analysis.bandpass.lowpass_3db_hz", positive=True)
    if lp >= nyq:
        raise ConfigError("analysis.bandpass.lowpass_3db_hz", f"not below Nyquist ({nyq:g} Hz)")
    if hp >= lp:
        raise ConfigError("analysis.bandpass.highpass_hz", "must be below lowpass_3db_hz")
    step = _number(cfg, "analysis.delay_step_ns", positive=True)
    dmin = _number(cfg, "analysis.delay_min_ns")
    dmax = _number(cfg, "analysis.delay_max_ns")
    if dmax < dmin:
        raise ConfigError("analysis.delay_max_ns", "must be >= delay_min_ns")
    k = step * 1e-9 / dt
    if abs(k - round(k)) > 1e-6 or round(k) < 1:
        raise ConfigError("analysis.delay_step_ns", "must be a positive multiple of the sample period")
    if max(abs(dmin), abs(dmax)) * 1e-9 >= length * dt / 2:
        raise ConfigError("analysis.delay_max_ns", "delay range exceeds half the record")
    xl = _number(cfg, "analysis.xcorr_max_lag_ns", positive=True)
    if xl * 1e-9 >= length * dt / 2:
        raise ConfigError("analysis.xcorr_max_lag_ns", "exceeds half the record")
    if an["xcorr_mode"] not in ("circular", "linear"):
        raise ConfigError("analysis.xcorr_mode", "must be circular or linear")
    if not isinstance(an["trigger"], bool):
        raise ConfigError("analysis.trigger", "expected true or false")
    _number(cfg, "analysis.trigger_threshold_db")


def normalize_config(raw: Any) -> dict:
    """Fill defaults into a raw config mapping and validate it."""
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    if "label" not in raw:
        raise ConfigError("label", "missing")
    if "r" in raw and "r_db" in raw:
        raise ConfigError("r_db", "give either r or r_db, not both")
    label = raw["label"]
    if label not in LABELS:
        raise ConfigError("label", f"must be one of {', '.join(LABELS)}")
    if "r_db" in raw:
        db = raw["r_db"]
        if isinstance(db, bool) or not isinstance(db, (int, float)) or not math.isfinite(db):
            raise ConfigError("r_db", "expected a finite number")
        if db > 0:
            raise ConfigError("r_db", "squeezing level must be <= 0 dB")
        r = float(r_from_db(db))
    else:
        r = raw.get("r", float(np.log(2.0) / 2.0))
    cfg = {"label": label, "r": r}
    for section in ("source", "medium", "acquisition", "analysis"):
        cfg[section] = _merge(section, DEFAULTS[section], raw.get(section, {}))
    if "medium" not in raw or "lines" not in raw["medium"]:
        cfg["medium"]["lines"] = _preset_lines(label)
    _validate(cfg)
    for key in ("length", "trials", "seed"):
        cfg["acquisition"][key] = int(cfg["acquisition"][key])
    if cfg["acquisition"]["shotnoise_traces"] is not None:
        cfg["acquisition"]["shotnoise_traces"] = int(cfg["acquisition"]["shotnoise_traces"])
    cfg["medium"]["grid"]["points"] = int(cfg["medium"]["grid"]["points"])
    return cfg


def _preset_lines(label: str) -> list:
    with open(preset_path(label)) as fh:
        doc = json.load(fh)
    return copy.deepcopy(doc.get("medium", {}).get("lines", []))


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def _reject_constants(name):
    raise ValueError(f"non-finite number {name} is not allowed")


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw) -> "RunConfig":
        return cls(normalize_config(raw))

    @property
    def digest(self) -> str:
        return config_digest(self.data)

    @property
    def label(self) -> str:
        return self.data["label"]

    @property
    def r(self) -> float:
        return float(self.data["r"])

    @property
    def trials(self) -> int:
        return self.data["acquisition"]["trials"]

    @property
    def seed(self) -> int:
        return self.data["acquisition"]["seed"]

    @property
    def length(self) -> int:
        return self.data["acquisition"]["length"]

    @property
    def sample_period(self) -> float:
        return float(self.data["acquisition"]["sample_period"])

    @property
    def shotnoise_traces(self) -> int:
        n = self.data["acquisition"]["shotnoise_traces"]
        return self.trials if n is None else n

    @property
    def squeezed_joint(self) -> str:
        return self.data["source"]["squeezed_joint"]

    @property
    def medium_mode(self) -> str:
        return self.data["medium"]["mode"]

    @property
    def offset(self) -> float:
        return float(self.data["medium"]["offset"])

    def with_overrides(self, **acquisition) -> "RunConfig":
        d = copy.deepcopy(self.data)
        for k, v in acquisition.items():
            if v is not None:
                d["acquisition"][k] = v
        return RunConfig.from_dict(d)

    def with_analysis(self, **analysis) -> "RunConfig":
        d = copy.deepcopy(self.data)
        for k, v in analysis.items():
            if v is not None:
                d["analysis"][k] = v
        return RunConfig.from_dict(d)

    def squeezing_spectrum(self) -> SqueezingSpectrum:
        s = self.data["source"]
        table = None if s["table"] is None else (s["table"]["freq_hz"], s["table"]["r"])
        return SqueezingSpectrum(self.r, tuple(s["band"]), s["rolloff_fraction"], table)

    def lines(self) -> list:
        return [LorentzianLine(**ln) for ln in self.data["medium"]["lines"]]

    def medium(self):
        m = self.data["medium"]
        g = m["grid"]
        grid = uniform_grid(g["f_min"], g["f_max"], g["points"])
        return medium_from_lines(self.lines(), grid, edge_tol=m["edge_tol"])

    def sweep_settings(self) -> SweepSettings:
        a = self.data["analysis"]
        return SweepSettings(
            band=NoiseBand(*a["band"]),
            bandpass=BandpassSpec(a["bandpass"]["highpass_hz"], a["bandpass"]["lowpass_3db_hz"]),
            delays=delay_grid(a["delay_min_ns"] * 1e-9, a["delay_max_ns"] * 1e-9, a["delay_step_ns"] * 1e-9),
            xcorr_max_lag=a["xcorr_max_lag_ns"] * 1e-9,
            xcorr_mode=a["xcorr_mode"],
            trigger=a["trigger"],
            trigger_threshold_db=a["trigger_threshold_db"],
        )


def load_config(path) -> RunConfig:
    """Read and validate a JSON run configuration (unknown keys are errors)."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text, parse_constant=_reject_constants)
    except (json.JSONDecodeError, ValueError) as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}") from None
    return RunConfig.from_dict(raw)


def load_preset(label: str) -> RunConfig:
    return load_config(preset_path(label))
