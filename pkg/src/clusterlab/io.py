"""Binary arrays with JSON sidecars, run-length masks and deterministic CSV output."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


def save_array(path, array: np.ndarray, **meta) -> Path:
    """Write ``path`` (.npy) plus ``path.json`` holding shape, dtype and ``meta``."""
    path = Path(path).with_suffix(".npy")
    np.save(path, np.asarray(array), allow_pickle=False)
    side = {"shape": list(np.shape(array)), "dtype": str(np.asarray(array).dtype)}
    side.update({k: _jsonable(v) for k, v in meta.items()})
    path.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def load_array(path):
    path = Path(path).with_suffix(".npy")
    meta = json.loads(path.with_suffix(".json").read_text())
    return np.load(path, allow_pickle=False), meta


def export_symbol(path, a) -> Path:
    """SymbolGrid values with (shape, lam, delta, spacings) in the sidecar."""
    nt, nx, _ = a.values.shape
    return save_array(path, a.values, lam=a.lam, delta=a.delta, period=a.period, label=a.label,
                      spacings=[a.period / nt, a.period / nx, float(a.xi[1] - a.xi[0])])


def export_trajectory(path, field, metric_name: str = "") -> Path:
    return save_array(path, field.spectrum, times=list(map(float, field.t)), lam=field.lam,
                      metric=metric_name or field.symbol_label, dt=field.dt)


def rle_encode(mask: np.ndarray) -> dict:
    """Row-major run lengths, starting with a run of False."""
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return {"shape": list(np.shape(mask)), "runs": runs}


def rle_decode(enc: Mapping) -> np.ndarray:
    out = np.zeros(int(np.prod(enc["shape"])), dtype=bool)
    pos, val = 0, False
    for r in enc["runs"]:
        out[pos:pos + r] = val
        pos += r
        val = not val
    return out.reshape(enc["shape"])


def _jsonable(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, Path):
        return str(v)
    return v


def format_value(v) -> str:
    """Stable text for CSV cells: repr for floats, lower-case booleans."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def _sort_key(v):
    if isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool):
        return (0, float(v), "")
    return (1, 0.0, format_value(v))


def write_rows(path, rows: Sequence[Mapping], columns: Sequence[str], key: Sequence[str] | None = None) -> Path:
    """CSV with fixed column order, rows sorted by ``key`` (default: all columns)."""
    key = list(columns) if key is None else list(key)
    ordered = sorted(rows, key=lambda r: tuple(_sort_key(r.get(k)) for k in key))
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in ordered:
            w.writerow([format_value(r.get(c)) for c in columns])
    return path


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def atlas_to_csv(path, atlas) -> Path:
    cols = ["a", "k", "l", "m", "n", "j", "interval_lo", "interval_hi", "sup_c", "clause"]
    return write_rows(path, atlas.rows(), cols, key=["a", "k", "l", "m", "n", "j"])


def write_svg_loglog(path, series: Mapping[str, Iterable[tuple]], title: str = "") -> Path | None:
    """Log-log plot of (lambda, value) series; skipped when matplotlib is absent."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return None
    plt.rcParams["svg.hashsalt"] = "clusterlab"
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, pts in series.items():
        pts = sorted((float(x), float(y)) for x, y in pts if float(y) > 0)
        if pts:
            ax.loglog(*zip(*pts), marker="o", label=name)
    ax.set_xlabel("lambda")
    ax.set_title(title)
    if series:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
