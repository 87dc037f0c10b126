"""CSV and metadata sidecar formats for signals and estimation results.

Signal CSV layout: header row ``k, y1..yM, u1..uM, r1..rQ`` (plus ``e1..eM``
when noise export is enabled), decimal values with 17 significant digits so
doubles round-trip losslessly.  Every file is preceded by a single comment
line embedding the configuration hash and seed list, and accompanied by a
JSON sidecar with the full reproducibility record.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .simulate import GENERATOR_ID, SignalSet

FLOAT_FMT = "%.17g"


def _meta_comment(meta: dict) -> str:
    seeds = meta.get("seeds", {})
    seed_str = ",".join(f"{k}={v}" for k, v in sorted(seeds.items()))
    return f"# config_sha256={meta.get('config_sha256', '')} seeds={seed_str}"


def write_signals_csv(path, signals: SignalSet, meta: dict, export_noise: bool = False) -> None:
    path = Path(path)
    m = signals.y.shape[0]
    q = signals.r.shape[0]
    header = ["k"] + [f"y{i + 1}" for i in range(m)] + [f"u{i + 1}" for i in range(m)]
    header += [f"r{j + 1}" for j in range(q)]
    cols = [np.arange(1, signals.n + 1), signals.y.T, signals.u.T, signals.r.T]
    if export_noise:
        if signals.e is None:
            raise DimensionError("noise export requested but the signal set carries no e")
        header += [f"e{i + 1}" for i in range(m)]
        cols.append(signals.e.T)
    table = np.column_stack(cols)
    lines = [_meta_comment(meta), ",".join(header)]
    for row in table:
        lines.append(",".join([str(int(row[0]))] + [FLOAT_FMT % v for v in row[1:]]))
    path.write_text("\n".join(lines) + "\n")
    write_meta(path, meta)


def read_signals_csv(path) -> tuple[SignalSet, dict]:
    path = Path(path)
    with path.open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    header = lines[0].strip().split(",")
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    cols = {name: data[:, i] for i, name in enumerate(header)}
    m = sum(1 for name in header if name.startswith("y"))
    q = sum(1 for name in header if name.startswith("r"))
    has_e = any(name.startswith("e") for name in header)
    n = data.shape[0]
    y = np.vstack([cols[f"y{i + 1}"] for i in range(m)])
    u = np.vstack([cols[f"u{i + 1}"] for i in range(m)])
    r = np.vstack([cols[f"r{j + 1}"] for j in range(q)]) if q else np.zeros((0, n))
    e = np.vstack([cols[f"e{i + 1}"] for i in range(m)]) if has_e else None
    meta = read_meta(path)
    return SignalSet(y=y, u=u, r=r, e=e, n=n), meta


def write_meta(data_path, meta: dict) -> None:
    sidecar = Path(str(data_path) + ".meta.json")
    payload = dict(meta)
    payload.setdefault("generator", GENERATOR_ID)
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_meta(data_path) -> dict:
    sidecar = Path(str(data_path) + ".meta.json")
    if sidecar.exists():
        return json.loads(sidecar.read_text())
    return {}


def write_estimate_csv(path, result, set_a, meta: dict) -> None:
    """theta-hat rows (system, block, lag, value), lambda-hat, NLL and stage trace."""
    path = Path(path)
    lines = [_meta_comment(meta), "record,system,block,lag,value"]
    theta = result.theta_hat
    for block_name, block in (("a", theta.a), ("b", theta.b), ("c", theta.c)):
        for i, coeffs in enumerate(block):
            for lag, value in enumerate(coeffs, start=1):
                lines.append(f"theta,{set_a[i]},{block_name},{lag},{FLOAT_FMT % value}")
    for i, lam in enumerate(np.atleast_1d(result.lambda_hat)):
        lines.append(f"lambda,{set_a[i]},,,{FLOAT_FMT % lam}")
    lines.append(f"nll,,,,{FLOAT_FMT % result.nll}")
    lines.append(f"ml_mode,,,,{result.ml_mode}")
    lines.append(f"converged,,,,{int(result.converged)}")
    for trace in result.stage_trace:
        lines.append(
            f"stage,{trace.stage},iters={trace.iterations},{trace.reason},"
            f"{FLOAT_FMT % trace.nll}"
        )
    path.write_text("\n".join(lines) + "\n")
    write_meta(path, meta)


def read_estimate_csv(path):
    """Rebuild (theta_hat, lambda_hat) from an estimate CSV."""
    from .likelihood import ParameterVectorA

    path = Path(path)
    rows = [
        ln.strip().split(",")
        for ln in path.read_text().splitlines()
        if ln and not ln.startswith("#")
    ][1:]
    theta_rows = [r for r in rows if r[0] == "theta"]
    lam_rows = [r for r in rows if r[0] == "lambda"]
    systems = sorted({int(r[1]) for r in theta_rows} | {int(r[1]) for r in lam_rows})
    pos = {s: i for i, s in enumerate(systems)}
    blocks = {"a": {}, "b": {}, "c": {}}
    for _, system, block_name, lag, value in theta_rows:
        blocks[block_name].setdefault(pos[int(system)], {})[int(lag)] = float(value)
    na = len(systems)

    def assemble(block_name, idx):
        entries = blocks[block_name].get(idx, {})
        if not entries:
            return np.zeros(0)
        length = max(entries)
        return np.array([entries.get(lag, 0.0) for lag in range(1, length + 1)])

    theta = ParameterVectorA(
        a=tuple(assemble("a", i) for i in range(na)),
        b=tuple(assemble("b", i) for i in range(na)),
        c=tuple(assemble("c", i) for i in range(na)),
    )
    lam = np.array([float(r[4]) for r in sorted(lam_rows, key=lambda r: pos[int(r[1])])])
    return theta, lam


def write_table(path, header: list[str], rows: list[list], meta: dict) -> None:
    """CSV plus an aligned text rendering of the same table."""
    path = Path(path)
    lines = [_meta_comment(meta), ",".join(header)]
    for row in rows:
        lines.append(",".join(
            FLOAT_FMT % v if isinstance(v, float) else str(v) for v in row
        ))
    path.write_text("\n".join(lines) + "\n")
    write_meta(path, meta)
    txt = Path(str(path).rsplit(".", 1)[0] + ".txt")
    str_rows = [header] + [
        [f"{v:.4f}" if isinstance(v, float) else str(v) for v in row] for row in rows
    ]
    widths = [max(len(r[i]) for r in str_rows) for i in range(len(header))]
    rendered = [
        "  ".join(val.rjust(widths[i]) for i, val in enumerate(row)) for row in str_rows
    ]
    txt.write_text("\n".join(rendered) + "\n")
