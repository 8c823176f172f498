"""CSV and key-value serialisation of traces, estimates and results.

Every file starts with one ``#`` comment line carrying the config hash and the
master seed; readers skip comment lines.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError
from .sim import CumulativeTrace

TRACE_HEADER = ["trial", "receiver", "t", "count"]
ESTIMATE_HEADER = ["trial", "receiver", "a", "d", "sse", "r_square", "iterations"]


def provenance_line(config_hash: str, seed: int, **extra) -> str:
    fields = [f"config_hash={config_hash}", f"seed={seed}"]
    fields += [f"{k}={v}" for k, v in extra.items()]
    return "# mcvdloc " + " ".join(fields)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], provenance: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(provenance + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def read_provenance(path: str | Path) -> dict[str, str]:
    with Path(path).open() as fh:
        first = fh.readline().strip()
    if not first.startswith("# mcvdloc"):
        return {}
    return dict(part.split("=", 1) for part in first.split()[2:])


def trace_rows(trial: int, traces: Sequence[CumulativeTrace]):
    for tr in traces:
        for t, c in zip(tr.sample_times, tr.counts):
            c = float(c)
            yield (trial, tr.receiver_id, f"{t:.10g}", int(c) if c.is_integer() else repr(c))


def write_traces(path, per_trial: Sequence[Sequence[CumulativeTrace]], provenance: str) -> Path:
    rows = (row for i, traces in enumerate(per_trial) for row in trace_rows(i, traces))
    return write_csv(path, TRACE_HEADER, rows, provenance)


def read_traces(path) -> list[list[CumulativeTrace]]:
    """Inverse of :func:`write_traces`; receivers keep file order per trial."""
    rows = read_csv(path)
    if rows and set(TRACE_HEADER) - set(rows[0]):
        raise ConfigError(f"{path}: expected columns {TRACE_HEADER}")
    grouped: dict[int, dict[int, list[tuple[float, float]]]] = defaultdict(dict)
    for row in rows:
        trial, rid = int(row["trial"]), int(row["receiver"])
        grouped[trial].setdefault(rid, []).append((float(row["t"]), float(row["count"])))
    out = []
    for trial in sorted(grouped):
        traces = []
        for rid, samples in grouped[trial].items():
            t = np.array([s[0] for s in samples])
            c = np.array([s[1] for s in samples])
            traces.append(CumulativeTrace(rid, t, c))
        out.append(traces)
    return out


def write_kv(path: str | Path, items: Sequence[tuple[str, object]], provenance: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(provenance + "\n")
        for key, value in items:
            fh.write(f"{key} = {_kv_value(value)}\n")
    return path


def _kv_value(value) -> str:
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_fmt(v) for v in value)
    return _fmt(value)


def read_kv(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
