"""On-disk formats: binary traces, shot directories, CSV tables, result bundles.

Trace file layout (all little-endian)::

    magic        4 bytes  b"TBTR"
    version      u16
    sample_period u64     femtoseconds
    count        u64
    mode         u8       0 probe, 1 conjugate, 2 shotnoise
    quadrature   u8       0 X, 1 Y
    seed_tag     u64
    samples      count * float64
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dispersion import GainProfile, MediumResponse
from .tracesim import ExperimentShot, QuadratureTrace

MAGIC = b"TBTR"
VERSION = 1
_HEADER = struct.Struct("<4sHQQBBQ")
_MODES = ("probe", "conjugate", "shotnoise")
_QUADS = ("X", "Y")
_FS = 1e15


class TraceFormatError(ValueError):
    pass


class CsvFormatError(ValueError):
    pass


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write(path, text.encode())


# ------------------------------------------------------------------ traces


def encode_trace(trace: QuadratureTrace) -> bytes:
    fs = round(trace.sample_period * _FS)
    if fs <= 0 or abs(fs / _FS - trace.sample_period) > 1e-9 * trace.sample_period:
        raise TraceFormatError("sample period is not representable in whole femtoseconds")
    if not 0 <= trace.seed_tag < 2**64:
        raise TraceFormatError("seed_tag must fit in an unsigned 64-bit field")
    head = _HEADER.pack(
        MAGIC, VERSION, fs, len(trace), _MODES.index(trace.mode), _QUADS.index(trace.quadrature), trace.seed_tag
    )
    return head + trace.samples.astype("<f8").tobytes()


def decode_trace(buf: bytes, source: str = "<bytes>") -> QuadratureTrace:
    if len(buf) < _HEADER.size:
        raise TraceFormatError(f"{source}: truncated header ({len(buf)} bytes)")
    magic, version, fs, count, mode, quad, seed = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TraceFormatError(f"{source}: bad magic {magic!r}")
    if version != VERSION:
        raise TraceFormatError(f"{source}: unsupported format version {version} (expected {VERSION})")
    if mode >= len(_MODES) or quad >= len(_QUADS):
        raise TraceFormatError(f"{source}: invalid mode/quadrature code")
    if fs == 0:
        raise TraceFormatError(f"{source}: zero sample period")
    need = _HEADER.size + 8 * count
    if len(buf) != need:
        kind = "truncated" if len(buf) < need else "trailing bytes in"
        raise TraceFormatError(f"{source}: {kind} sample block ({len(buf)} bytes, expected {need})")
    samples = np.frombuffer(buf, dtype="<f8", count=count, offset=_HEADER.size).astype(np.float64)
    return QuadratureTrace(samples, fs / _FS, _MODES[mode], _QUADS[quad], int(seed))


def write_trace(path, trace: QuadratureTrace) -> None:
    atomic_write(path, encode_trace(trace))


def read_trace(path) -> QuadratureTrace:
    return decode_trace(Path(path).read_bytes(), str(path))


# ------------------------------------------------------------ shot folders

_SHOT_FILES = {
    "probe_x": "probe_X.tbtr",
    "probe_y": "probe_Y.tbtr",
    "conj_x": "conj_X.tbtr",
    "conj_y": "conj_Y.tbtr",
}


def write_shot(directory, shot: ExperimentShot) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for attr, name in _SHOT_FILES.items():
        write_trace(d / name, getattr(shot, attr))
    meta = {
        "shot_index": shot.shot_index,
        "squeezed_joint": shot.squeezed_joint,
        "config_digest": shot.config_digest,
        "medium_mode": shot.medium_mode,
        "files": _SHOT_FILES,
    }
    atomic_write_text(d / "shot.json", json.dumps(meta, indent=2, sort_keys=True))


def read_shot(directory) -> ExperimentShot:
    d = Path(directory)
    try:
        meta = json.loads((d / "shot.json").read_text())
    except FileNotFoundError:
        raise TraceFormatError(f"{d}: missing shot.json") from None
    traces = {attr: read_trace(d / name) for attr, name in meta.get("files", _SHOT_FILES).items()}
    return ExperimentShot(
        squeezed_joint=meta["squeezed_joint"],
        config_digest=meta.get("config_digest", ""),
        shot_index=int(meta["shot_index"]),
        medium_mode=meta.get("medium_mode"),
        **traces,
    )


@dataclass
class RunManifest:
    """Index of a directory of simulated (or converted) shots."""

    config: dict
    config_digest: str
    shots: list
    shotnoise: list
    tool_version: str = ""
    stage: str = "simulate"

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config,
                "config_digest": self.config_digest,
                "shots": self.shots,
                "shotnoise": self.shotnoise,
                "tool_version": self.tool_version,
                "stage": self.stage,
            },
            indent=2,
            sort_keys=True,
        )


def write_manifest(directory, manifest: RunManifest) -> None:
    atomic_write_text(Path(directory) / "manifest.json", manifest.to_json())


def read_manifest(directory) -> RunManifest:
    p = Path(directory) / "manifest.json"
    if not p.exists():
        raise TraceFormatError(f"{directory}: no manifest.json")
    doc = json.loads(p.read_text())
    return RunManifest(
        config=doc["config"],
        config_digest=doc["config_digest"],
        shots=list(doc["shots"]),
        shotnoise=list(doc["shotnoise"]),
        tool_version=doc.get("tool_version", ""),
        stage=doc.get("stage", "simulate"),
    )


# --------------------------------------------------------------------- CSV

GAIN_COLUMNS = ("freq_hz", "gain")
RESPONSE_COLUMNS = ("freq_hz", "amplitude", "phase_rad", "group_delay_s", "noise_coupling")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows) -> None:
    atomic_write_text(path, _csv_text(header, rows))


def read_numeric_csv(path, columns) -> dict:
    """Read a CSV whose header is exactly ``columns``; every cell must parse as a float."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvFormatError(f"{path}: empty file (header row required)")
    header = [h.strip() for h in rows[0]]
    if tuple(header) != tuple(columns):
        raise CsvFormatError(f"{path}: header {header} does not match expected {list(columns)}")
    out = {c: [] for c in columns}
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(columns):
            raise CsvFormatError(f"{path}: line {ln}: expected {len(columns)} fields, got {len(row)}")
        for col, cell in zip(columns, row):
            try:
                out[col].append(float(cell))
            except ValueError:
                raise CsvFormatError(f"{path}: line {ln}, column {col}: not a number: {cell!r}") from None
    return {c: np.asarray(v) for c, v in out.items()}


def write_gain_csv(path, profile: GainProfile) -> None:
    write_csv(path, GAIN_COLUMNS, zip(profile.freq, profile.gain))


def read_gain_csv(path) -> GainProfile:
    cols = read_numeric_csv(path, GAIN_COLUMNS)
    try:
        return GainProfile(cols["freq_hz"], cols["gain"])
    except ValueError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None


def write_response_csv(path, resp: MediumResponse) -> None:
    write_csv(
        path,
        RESPONSE_COLUMNS,
        zip(resp.freq, resp.amplitude, resp.phase, resp.group_delay, resp.noise_coupling),
    )


def read_response_csv(path) -> MediumResponse:
    c = read_numeric_csv(path, RESPONSE_COLUMNS)
    try:
        return MediumResponse(c["freq_hz"], c["amplitude"], c["phase_rad"], c["group_delay_s"], c["noise_coupling"])
    except ValueError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None


COV_LABELS = ("X_p", "Y_p", "X_c", "Y_c")


def write_covariance_csv(path, cov) -> None:
    m = np.asarray(getattr(cov, "entries", cov), dtype=float)
    rows = [[COV_LABELS[i]] + [f"{v:.17g}" for v in m[i]] for i in range(4)]
    write_csv(path, ("mode",) + COV_LABELS, rows)


def read_covariance_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ("mode",) + COV_LABELS or len(rows) != 5:
        raise CsvFormatError(f"{path}: expected a 4x4 covariance table with header")
    try:
        return np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise CsvFormatError(f"{path}: {exc}") from None


# ----------------------------------------------------------- result bundle

SWEEP_COLUMNS = (
    "delay_ns",
    "insep_mean",
    "insep_sem",
    "sqz_db_mean",
    "sqz_db_sem",
    "mi_bits_mean",
    "mi_bits_sem",
)


def sweep_rows(result) -> list:
    return [
        [d * 1e9, a, b, c, e, f, g]
        for d, a, b, c, e, f, g in zip(
            result.delays,
            result.insep_mean,
            result.insep_sem,
            result.sqz_db_mean,
            result.sqz_db_sem,
            result.mi_bits_mean,
            result.mi_bits_sem,
        )
    ]


def write_sweep_csv(path, result) -> None:
    write_csv(path, SWEEP_COLUMNS, sweep_rows(result))


def read_sweep_csv(path) -> dict:
    return read_numeric_csv(path, SWEEP_COLUMNS)


SHOT_TABLE_COLUMNS = (
    "shot",
    "squeezed_joint",
    "insep_at_zero",
    "insep_min",
    "insep_min_delay_ns",
    "sqz_db_min",
    "xcorr_peak_ns",
    "xcorr_peak_discrete_ns",
)


@dataclass
class ResultBundle:
    """Everything needed to audit one analyzed condition."""

    config: dict
    config_digest: str
    summary: dict
    provenance: dict
    directory: Optional[Path] = None


def write_bundle(directory, label: str, config: dict, digest: str, result, summary: dict, provenance: dict) -> ResultBundle:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    atomic_write_text(d / f"{label}_config.json", json.dumps(config, indent=2, sort_keys=True))
    write_sweep_csv(d / f"{label}_sweep.csv", result)
    write_csv(
        d / f"{label}_shots.csv",
        SHOT_TABLE_COLUMNS,
        [[row[c] for c in SHOT_TABLE_COLUMNS] for row in result.shot_table],
    )
    write_covariance_csv(d / f"{label}_cov_delay0.csv", result.cov_mean[int(np.argmin(np.abs(result.delays)))])
    summary = dict(summary, config_digest=digest, label=label)
    atomic_write_text(
        d / f"{label}_summary.json",
        json.dumps({"summary": summary, "provenance": provenance}, indent=2, sort_keys=True, allow_nan=True),
    )
    return ResultBundle(config, digest, summary, provenance, d)


def verify_bundle(directory, label: str) -> list:
    """Consistency problems of a written bundle (empty list means consistent)."""
    from .config import config_digest

    d = Path(directory)
    problems = []
    need = [f"{label}_{s}" for s in ("config.json", "sweep.csv", "shots.csv", "summary.json", "cov_delay0.csv")]
    for name in need:
        if not (d / name).exists():
            problems.append(f"missing {name}")
    if problems:
        return problems
    cfg = json.loads((d / f"{label}_config.json").read_text())
    doc = json.loads((d / f"{label}_summary.json").read_text())
    digest = doc["summary"].get("config_digest")
    if digest != config_digest(cfg):
        problems.append("summary digest does not match the stored config")
    try:
        sweep = read_sweep_csv(d / f"{label}_sweep.csv")
        if sweep["delay_ns"].size == 0:
            problems.append("sweep table is empty")
    except CsvFormatError as exc:
        problems.append(str(exc))
    with open(d / f"{label}_shots.csv", newline="") as fh:
        n_rows = sum(1 for _ in csv.reader(fh)) - 1
    if n_rows != doc["summary"].get("n_shots"):
        problems.append("shot table length differs from n_shots")
    return problems
