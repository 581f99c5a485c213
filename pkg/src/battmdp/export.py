"""CSV/JSON writers and readers for tensors, traces and case-study reports.

Every file starts with metadata (tool version, seed, config hash) so it can
be regenerated.  CSV files carry it as ``# key: value`` comment lines; JSON
files under a ``_metadata`` key.  Nothing time-dependent is written, so
reruns produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .mdp import N_ACTIONS, N_STATES, Action, TransitionTensor

TENSOR_COLUMNS = ("s", "a", "s_next", "p", "count")


def metadata(seed: int | None, config_hash: str, **extra) -> dict:
    meta = {"tool": "battmdp", "version": __version__, "seed": seed, "config_hash": config_hash}
    meta.update(extra)
    return meta


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path: str | Path) -> tuple[dict, list[str], list[list[str]]]:
    """Returns (metadata, header, rows) with cells left as strings."""
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            k, _, v = line[2:].partition(": ")
            meta[k] = v
        else:
            body.append(line)
    rows = list(csv.reader(body))
    return meta, rows[0], rows[1:]


def write_json(path: str | Path, doc: dict, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"_metadata": meta, **doc}, indent=1, sort_keys=True) + "\n")
    return path


# -- tensors ------------------------------------------------------------------

def write_tensor(directory: str | Path, tensor: TransitionTensor, meta: dict) -> list[Path]:
    """One triplet CSV per action: ``<directory>/<Action>.csv``."""
    directory = Path(directory)
    by_action: dict[int, list] = {a: [] for a in range(N_ACTIONS)}
    for row in tensor.triplets():
        by_action[row[1]].append(row)
    return [write_csv(directory / f"{Action(a).name}.csv", TENSOR_COLUMNS, rows,
                      {**meta, "action": Action(a).name}) for a, rows in by_action.items()]


def read_tensor(directory: str | Path) -> TransitionTensor:
    directory = Path(directory)
    p = np.zeros((N_STATES, N_ACTIONS, N_STATES))
    counts = np.zeros((N_STATES, N_ACTIONS), dtype=np.int64)
    for a in Action:
        path = directory / f"{a.name}.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing tensor file {path}")
        _, header, rows = read_csv(path)
        if tuple(header) != TENSOR_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        for s, act, s2, prob, cnt in rows:
            if int(act) != int(a):
                raise ValueError(f"{path}: row for action {act} in file for {a.name}")
            p[int(s), int(a), int(s2)] = float(prob)
            counts[int(s), int(a)] = int(cnt)
    tensor = TransitionTensor(p, counts, counts == 0)
    tensor.validate()
    return tensor


# -- traces -------------------------------------------------------------------

def write_trace(directory: str | Path, trace, meta: dict, prefix: str = "", decimate: int = 1) -> list[Path]:
    """Battery (per tick), vehicle (per tick) and epoch (1 Hz) CSVs for one flight."""
    directory = Path(directory)
    decimate = max(int(decimate), 1)
    meta = {**meta, "outcome": trace.outcome, "decimate": decimate}
    out = []
    cols, data = trace.battery_rows()
    out.append(write_csv(directory / f"{prefix}battery.csv", cols, data[::decimate].tolist(), meta))
    cols, data = trace.vehicle_rows()
    out.append(write_csv(directory / f"{prefix}vehicle.csv", cols, data[::decimate].tolist(), meta))
    cols, rows = trace.epoch_rows()
    out.append(write_csv(directory / f"{prefix}epochs.csv", cols, rows, meta))
    return out


def action_timeline(trace) -> tuple[list[str], list[list]]:
    """Executed action per epoch with a flag marking switch events."""
    rows, prev = [], None
    for t, a in trace.actions():
        rows.append([t, a.name, int(prev is not None and a != prev)])
        prev = a
    return ["t", "action", "switch"], rows


def eod_series(trace) -> tuple[list[str], list[list]]:
    cols = ["t", "eod_b1", "eod_b2", "pack_eod", "rfd", "rfd_plus_tsf"]
    t_sf = trace.scenario.t_sf
    return cols, [[e.t, *e.eod, e.pack_eod, e.rfd, e.rfd + t_sf] for e in trace.epochs]


def write_case_study(directory: str | Path, result, meta: dict, decimate: int = 20) -> list[Path]:
    """Summary table (CSV and text) plus plot-ready series per scenario."""
    directory = Path(directory)
    meta = {**meta, "case": result.case_id, "mission_duration": result.mission_duration}
    cols = list(dict.fromkeys(k for row in result.rows for k in row))
    out = [write_csv(directory / "summary.csv", cols, [[row.get(c, "") for c in cols] for row in result.rows],
                     meta)]
    text = [f"case study {result.case_id}: mission {result.mission_duration:.0f} s"]
    for row in result.rows:
        line = f"  {row['scenario']:<6} {row['outcome']:<16} end {row['end_time']:6.0f} s"
        line += f"  first action {row['first_action']:<9} switches {row['n_switches']}"
        if "mean_i_branch1" in row:
            line += f"  mean branch currents {row['mean_i_branch1']:.2f} / {row['mean_i_branch2']:.2f} A"
        text.append(line)
    path = directory / "summary.txt"
    path.write_text("\n".join(f"# {k}: {v}" for k, v in meta.items()) + "\n" + "\n".join(text) + "\n")
    out.append(path)
    for name, trace in result.traces.items():
        sub = directory / name
        smeta = {**meta, "scenario": name}
        out += write_trace(sub, trace, smeta, decimate=decimate)
        cols, rows = trace.battery_rows()
        keep = rows[::max(decimate, 1)]
        out.append(write_csv(sub / "branch_currents.csv", ["t", "i_branch1", "i_branch2"],
                             keep[:, [0, 3, 4]].tolist(), smeta))
        out.append(write_csv(sub / "eod_vs_rfd.csv", *eod_series(trace), smeta))
        out.append(write_csv(sub / "actions.csv", *action_timeline(trace), smeta))
    return out
