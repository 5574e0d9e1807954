"""Snapshot persistence, CSV emission, and run-directory locking.

Snapshot layout: a UTF-8 ``key: value`` header block terminated by one
blank line, followed by the physical node values as raw little-endian
64-bit floats in canonical C order.  Floating-point header entries are
written in hex notation so a write/read round trip is bitwise exact,
which is what makes split runs resume identically.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .errors import CorruptHeader, LockHeld, TruncatedPayload, VersionMismatch
from .flow import EnergyLedger, FlowState
from .grid import Field, Grid, Topology

SNAPSHOT_VERSION = 1

CSV_COLUMNS = (
    "t",
    "F2",
    "E2",
    "dissipation",
    "max_local_energy",
    "biharmonic_residual",
    "dt",
    "step",
)


def write_snapshot(state: FlowState, path: str | os.PathLike):
    grid = state.u.grid
    header = {
        "version": SNAPSHOT_VERSION,
        "d": grid.d,
        "n_per_axis": grid.n,
        "L": state.u.L,
        "topology": grid.topology.value,
        "t": float(state.t).hex(),
        "step": state.step_index,
        "dt": float(state.dt).hex(),
        "f2_initial": float(state.ledger.f2_initial).hex(),
        "f2_last": float(state.ledger.f2_last).hex(),
        "dissipation": float(state.ledger.dissipation).hex(),
    }
    lines = "".join(f"{k}: {v}\n" for k, v in header.items()) + "\n"
    payload = np.ascontiguousarray(state.u.phys, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(lines.encode("utf-8"))
        f.write(payload)


def read_snapshot(path: str | os.PathLike) -> FlowState:
    with open(path, "rb") as f:
        blob = f.read()
    sep = blob.find(b"\n\n")
    if sep < 0:
        raise CorruptHeader("missing blank-line terminator")
    try:
        text = blob[:sep].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptHeader(f"header is not UTF-8: {exc}")
    header: dict[str, str] = {}
    for line in text.splitlines():
        if ":" not in line:
            raise CorruptHeader(f"malformed header line {line!r}")
        key, _, value = line.partition(":")
        header[key.strip()] = value.strip()

    required = (
        "version",
        "d",
        "n_per_axis",
        "L",
        "topology",
        "t",
        "step",
        "dt",
        "f2_initial",
        "f2_last",
        "dissipation",
    )
    missing = [k for k in required if k not in header]
    if missing:
        raise CorruptHeader(f"missing header keys: {missing}")
    if int(header["version"]) != SNAPSHOT_VERSION:
        raise VersionMismatch(
            f"snapshot version {header['version']} != {SNAPSHOT_VERSION}"
        )

    d = int(header["d"])
    n = int(header["n_per_axis"])
    L = int(header["L"])
    grid = Grid(d, n, Topology(header["topology"]))
    expected = n**d * L * 8
    payload = blob[sep + 2:]
    if len(payload) != expected:
        raise TruncatedPayload(
            f"payload holds {len(payload)} bytes, header promises {expected}"
        )
    phys = np.frombuffer(payload, dtype="<f8").reshape((n,) * d + (L,))
    vals = np.zeros(grid.shape + (L,))
    vals[grid.phys] = phys
    u = Field(grid, vals, ghosts_valid=(grid.pad == 0))

    t = float.fromhex(header["t"])
    f2_last = float.fromhex(header["f2_last"])
    ledger = EnergyLedger(
        f2_initial=float.fromhex(header["f2_initial"]),
        f2_history=[(t, f2_last)],
        dissipation=float.fromhex(header["dissipation"]),
    )
    return FlowState(
        u=u,
        t=t,
        dt=float.fromhex(header["dt"]),
        step_index=int(header["step"]),
        ledger=ledger,
    )


class TimeSeriesWriter:
    """Incremental CSV writer, flushed on every row."""

    def __init__(self, path: str | os.PathLike):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(CSV_COLUMNS)
        self._fh.flush()
        self._last = (-np.inf, -1)

    def write_row(self, **kw):
        key = (kw["t"], kw["step"])
        if key <= self._last:
            raise ValueError("CSV rows must be monotone in (t, step)")
        self._last = key
        self._writer.writerow([repr(kw[c]) for c in CSV_COLUMNS])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class EventLogWriter:
    """One text record per concentration event, flushed immediately."""

    def __init__(self, path: str | os.PathLike):
        self._fh = open(path, "w")

    def write_event(self, event: dict):
        center = " ".join(f"{c:.17g}" for c in event["center"])
        status = event.get("status", "detected")
        self._fh.write(
            f"t={event['t']:.17g} center=({center}) E={event['E']:.17g}"
            f" status={status}\n"
        )
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RunDirLock:
    """Single-writer guard on a run directory; a present lock file is an
    error, never silently stolen."""

    def __init__(self, out_dir: str | os.PathLike):
        self.path = Path(out_dir) / ".bhf_lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise LockHeld(f"run directory already locked: {self.path}")
        with os.fdopen(fd, "w") as f:
            f.write(f"pid={os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
