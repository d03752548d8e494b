"""Serialization: parameter/report JSON, trajectory CSV, configs and run manifests.

Mode indices are 1-based in every file and 0-based in memory; conversion
happens only here. Floats are written with ``repr``, the shortest string that
parses back to the same double, so files round-trip bit-exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import PARAM_NAMES, Dims, ModelParams, SwitchingSequence, example1_params
from .simulate import Trajectory

PARAMS_FORMAT = "ncrsm-params"
REPORT_FORMAT = "ncrsm-em-report"
FORMAT_VERSION = 1
PER_MODE = ("A_c", "A_a", "C_c", "C_a", "Sigma_c", "Sigma_a")


class ParseError(ValueError):
    """Malformed input file; carries the 1-based line and column when known."""

    def __init__(self, path, msg, line=None, column=None):
        loc = str(path)
        if line is not None:
            loc += f":{line}"
            if column is not None:
                loc += f":{column}"
        super().__init__(f"{loc}: {msg}")
        self.path, self.line, self.column = str(path), line, column


def _matrix(a) -> dict:
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite entries cannot be serialized")
    return {"shape": list(a.shape), "data": a.tolist()}


def _unmatrix(obj, where) -> np.ndarray:
    if not isinstance(obj, dict) or set(obj) != {"shape", "data"}:
        raise ValueError(f"{where}: expected an object with 'shape' and 'data'")
    a = np.asarray(obj["data"], dtype=float)
    if list(a.shape) != list(obj["shape"]):
        raise ValueError(f"{where}: data shape {list(a.shape)} does not match declared {obj['shape']}")
    return a


def params_to_dict(p: ModelParams) -> dict:
    d = p.dims
    out = {"format": PARAMS_FORMAT, "version": FORMAT_VERSION,
           "dims": {"n_y": d.n_y, "n_xc": d.n_xc, "n_xa": d.n_xa, "m_c": d.m_c, "m_a": d.m_a}}
    for name in PER_MODE:
        out[name] = [{"mode": k + 1, **_matrix(M)} for k, M in enumerate(getattr(p, name))]
    out["Sigma_m"] = _matrix(p.Sigma_m)
    out["pi_c"] = _matrix(p.pi_c)
    out["pi_a"] = _matrix(p.pi_a)
    return out


def params_from_dict(obj: dict) -> ModelParams:
    expected = {"format", "version", "dims", *PARAM_NAMES}
    unknown = set(obj) - expected
    missing = expected - set(obj)
    if unknown or missing:
        raise ValueError(f"params object: unknown keys {sorted(unknown)}, missing keys {sorted(missing)}")
    if obj["format"] != PARAMS_FORMAT or obj["version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported params format {obj['format']!r} v{obj['version']}")
    kw = {}
    for name in PER_MODE:
        mats = []
        for k, entry in enumerate(obj[name]):
            if entry.get("mode") != k + 1:
                raise ValueError(f"{name}: entry {k} has mode {entry.get('mode')!r}, expected {k + 1}")
            mats.append(_unmatrix({"shape": entry["shape"], "data": entry["data"]}, f"{name}[{k + 1}]"))
        kw[name] = np.array(mats)
    for name in ("Sigma_m", "pi_c", "pi_a"):
        kw[name] = _unmatrix(obj[name], name)
    p = ModelParams(**kw)
    if p.dims != Dims(**obj["dims"]):
        raise ValueError(f"declared dims {obj['dims']} do not match matrix shapes {p.dims.as_tuple()}")
    return p


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def save_params(p: ModelParams, path):
    Path(path).write_text(dumps(params_to_dict(p)))


def _load_json(path):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.msg, exc.lineno, exc.colno) from None


def load_params(path) -> ModelParams:
    try:
        return params_from_dict(_load_json(path))
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(path, str(exc)) from None


# -- trajectories -------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory(traj: Trajectory, path):
    """CSV with columns ``t, y_*[, xc_*, xa_*, sc, sa]``; boundary states in ``#`` lines."""
    y = traj.y
    T, n_y = y.shape
    header = ["t"] + [f"y_{i + 1}" for i in range(n_y)]
    truth = traj.has_truth
    if truth:
        header += [f"xc_{i + 1}" for i in range(traj.x_c_true.shape[1])]
        header += [f"xa_{i + 1}" for i in range(traj.x_a_true.shape[1])]
    seq = traj.seq_true is not None
    if seq:
        header += ["sc", "sa"]
    lines = [
        "# x_c0: " + " ".join(_fmt(v) for v in traj.x_c0),
        "# x_aT1: " + " ".join(_fmt(v) for v in traj.x_aT1),
        ",".join(header),
    ]
    for t in range(T):
        row = [str(t + 1)] + [_fmt(v) for v in y[t]]
        if truth:
            row += [_fmt(v) for v in traj.x_c_true[t]] + [_fmt(v) for v in traj.x_a_true[t]]
        if seq:
            row += [str(int(traj.seq_true.s_c[t]) + 1), str(int(traj.seq_true.s_a[t]) + 1)]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_float(cell, path, line, col):
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(path, f"not a number: {cell!r}", line, col) from None
    if not np.isfinite(v):
        raise ParseError(path, f"non-finite value {cell!r}", line, col)
    return v


def read_trajectory(path, n_xc: int | None = None, n_xa: int | None = None) -> Trajectory:
    """Parse a trajectory CSV written by :func:`write_trajectory` or by hand.

    Only ``t`` and ``y_*`` columns are required. Missing boundary lines mean
    zero boundary states, which then need ``n_xc``/``n_xa`` (or truth columns)
    to size them.
    """
    path = Path(path)
    bounds = {}
    rows = []
    header = None
    header_line = None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.rstrip("\r\n")
            if not text.strip():
                continue
            if text.startswith("#"):
                key, _, val = text[1:].partition(":")
                key = key.strip()
                if key in ("x_c0", "x_aT1"):
                    bounds[key] = [_parse_float(c, path, lineno, i + 1) for i, c in enumerate(val.split())]
                continue
            cells = next(csv.reader([text]))
            if header is None:
                header, header_line = [c.strip() for c in cells], lineno
                continue
            if len(cells) != len(header):
                raise ParseError(path, f"expected {len(header)} fields, found {len(cells)}", lineno)
            rows.append((lineno, cells))
    if header is None:
        raise ParseError(path, "missing header")
    if header[0] != "t":
        raise ParseError(path, "first column must be 't'", header_line, 1)
    ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
    xccols = [i for i, h in enumerate(header) if h.startswith("xc_")]
    xacols = [i for i, h in enumerate(header) if h.startswith("xa_")]
    known = {0, *ycols, *xccols, *xacols}
    for name in ("sc", "sa"):
        if name in header:
            known.add(header.index(name))
    extra = [header[i] for i in range(len(header)) if i not in known]
    if extra:
        raise ParseError(path, f"unknown columns {extra}", header_line)
    if not ycols:
        raise ParseError(path, "no y_* columns", header_line)
    if not rows:
        raise ParseError(path, "no data rows")

    T = len(rows)
    num_cols = ycols + xccols + xacols
    data = np.empty((T, len(num_cols)))
    has_seq = "sc" in header and "sa" in header
    seq = np.empty((T, 2), dtype=np.int64)
    for r, (lineno, cells) in enumerate(rows):
        try:
            t = int(cells[0])
        except ValueError:
            raise ParseError(path, f"bad time index {cells[0]!r}", lineno, 1) from None
        if t != r + 1:
            raise ParseError(path, f"time index {t}, expected {r + 1}", lineno, 1)
        for k, c in enumerate(num_cols):
            data[r, k] = _parse_float(cells[c], path, lineno, c + 1)
        if has_seq:
            for k, name in enumerate(("sc", "sa")):
                c = header.index(name)
                try:
                    v = int(cells[c])
                except ValueError:
                    raise ParseError(path, f"bad mode label {cells[c]!r}", lineno, c + 1) from None
                if v < 1:
                    raise ParseError(path, f"mode labels are 1-based, got {v}", lineno, c + 1)
                seq[r, k] = v - 1

    ny = len(ycols)
    y = data[:, :ny]
    x_c = data[:, ny:ny + len(xccols)] if xccols else None
    x_a = data[:, ny + len(xccols):] if xacols else None
    n_xc = n_xc or (x_c.shape[1] if x_c is not None else None)
    n_xa = n_xa or (x_a.shape[1] if x_a is not None else None)
    x_c0 = np.asarray(bounds["x_c0"]) if "x_c0" in bounds else (np.zeros(n_xc) if n_xc else np.zeros(0))
    x_aT1 = np.asarray(bounds["x_aT1"]) if "x_aT1" in bounds else (np.zeros(n_xa) if n_xa else np.zeros(0))
    return Trajectory(
        y=y, x_c0=x_c0, x_aT1=x_aT1, x_c_true=x_c, x_a_true=x_a,
        seq_true=SwitchingSequence(seq[:, 0], seq[:, 1]) if has_seq else None,
    )


# -- EM reports ----------------------------------------------------------------

def report_to_dict(report) -> dict:
    a = report.final_assignment
    return {
        "format": REPORT_FORMAT,
        "version": FORMAT_VERSION,
        "stop_reason": report.stop_reason,
        "restart_index_chosen": report.restart_index_chosen,
        "restart_logliks": [None if not np.isfinite(v) else v for v in report.restart_logliks],
        "restart_stop_reasons": list(report.restart_stop_reasons),
        "final_loglik": report.final_loglik,
        "loglik_trace": list(report.loglik_trace),
        "q_trace": [{"q1": q.q1, "q2": q.q2, "q3": q.q3, "q_total": q.q_total} for q in report.q_trace],
        "guard_steps": report.guard_steps,
        "notes": list(report.notes),
        "s_c_hat": (a.s_c_hat + 1).tolist(),
        "s_a_hat": (a.s_a_hat + 1).tolist(),
        "final_params": params_to_dict(report.final_params),
        "params_trace": [params_to_dict(p) for p in report.params_trace],
    }


def save_report(report, path):
    Path(path).write_text(dumps(report_to_dict(report)))


# -- configs -------------------------------------------------------------------

SIM_KEYS = {"model", "example", "T", "seed", "x_c0", "x_aT1", "state_cap"}
EXAMPLE_KEYS = {"name", "sigma", "sigma_m", "pi_c", "pi_a"}
IDENTIFY_KEYS = {"em", "init_model", "seed"}


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ValueError(f"{where}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")


def load_config(path, allowed: set) -> dict:
    try:
        obj = _load_json(path)
        _check_keys(obj, allowed, "config")
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(path, str(exc)) from None
    return obj


def env_seed(seed):
    """``NCRSM_SEED`` overrides ``seed`` when set."""
    env = os.environ.get("NCRSM_SEED")
    return int(env) if env not in (None, "") else seed


def model_from_config(cfg: dict, base: Path | None = None) -> ModelParams:
    """Parameters named in a simulation config: inline, a file path or a built-in example."""
    if ("model" in cfg) == ("example" in cfg):
        raise ValueError("config needs exactly one of 'model' or 'example'")
    if "example" in cfg:
        ex = cfg["example"]
        _check_keys(ex, EXAMPLE_KEYS, "example")
        if ex.get("name") != "example1":
            raise ValueError(f"unknown example {ex.get('name')!r}")
        kw = {k: ex[k] for k in ("sigma", "sigma_m", "pi_c", "pi_a") if k in ex}
        return example1_params(**kw)
    m = cfg["model"]
    if isinstance(m, str):
        p = Path(m)
        return load_params(p if p.is_absolute() or base is None else base / p)
    return params_from_dict(m)


# -- manifests -----------------------------------------------------------------

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    tool_version: str
    command: str
    config: dict
    seeds: dict
    input_hashes: dict = field(default_factory=dict)
    output_files: list = field(default_factory=list)
    wall_clock_s: float = 0.0
    stop_reason: str | None = None
    assumptions: dict = field(default_factory=dict)
    python: str = field(default_factory=platform.python_version)
    numpy: str = field(default_factory=lambda: np.__version__)

    def write(self, path):
        Path(path).write_text(dumps(asdict(self)))


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
