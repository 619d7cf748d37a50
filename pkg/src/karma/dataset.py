"""Battery capacity series: loading, fleet manifests and leave-one-out splits."""
from __future__ import annotations

import configparser
import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvariantViolation, ParseError, SpOutOfRange, UnknownBattery

FORMATS = ("generic_csv", "nasa_csv", "calce_csv")
GENERIC_HEADER = ("cycle", "capacity_ah")
# capacity above this multiple of the rating almost always means mAh or Wh
CAPACITY_SANITY_FACTOR = 1.2


@dataclass(frozen=True)
class CapacitySeries:
    """Per-cycle discharge capacity of one cell.

    ``cycles`` is always the dense index ``1..N``; the indices found in the
    source file are kept in ``original_cycles``.
    """

    battery_id: str
    cycles: np.ndarray
    capacity: np.ndarray
    rated_capacity: float
    eol_fraction: float = 0.7
    original_cycles: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        cycles = np.asarray(self.cycles, dtype=np.int64)
        cap = np.asarray(self.capacity, dtype=float)
        object.__setattr__(self, "cycles", cycles)
        object.__setattr__(self, "capacity", cap)
        if self.original_cycles is None:
            object.__setattr__(self, "original_cycles", cycles.copy())
        else:
            object.__setattr__(self, "original_cycles", np.asarray(self.original_cycles, dtype=np.int64))
        _validate(self)

    def __len__(self):
        return int(self.cycles.size)

    @property
    def eol_capacity(self) -> float:
        return eol_capacity(self)

    @property
    def soh_percent(self) -> np.ndarray:
        return 100.0 * self.capacity / self.rated_capacity

    def truncate(self, last_cycle: int, battery_id=None) -> "CapacitySeries":
        """Cycles ``1..last_cycle`` as a new series."""
        keep = self.cycles <= last_cycle
        return replace(self, battery_id=battery_id or self.battery_id, cycles=self.cycles[keep],
                       capacity=self.capacity[keep], original_cycles=self.original_cycles[keep])


def _validate(s: CapacitySeries):
    if not (0.0 < s.eol_fraction < 1.0):
        raise InvariantViolation(f"{s.battery_id}: eol_fraction {s.eol_fraction} not in (0, 1)")
    if not s.rated_capacity > 0:
        raise InvariantViolation(f"{s.battery_id}: rated capacity must be positive")
    if s.cycles.shape != s.capacity.shape or s.cycles.ndim != 1:
        raise InvariantViolation(f"{s.battery_id}: cycles and capacity must be equal-length 1-D arrays")
    if s.cycles.size == 0:
        raise InvariantViolation(f"{s.battery_id}: empty series")
    if s.cycles[0] != 1 or np.any(np.diff(s.cycles) != 1):
        raise InvariantViolation(f"{s.battery_id}: cycle index must run 1..N without gaps")
    if not np.all(np.isfinite(s.capacity)):
        raise InvariantViolation(f"{s.battery_id}: non-finite capacity")
    if np.any(s.capacity <= 0):
        raise InvariantViolation(f"{s.battery_id}: non-positive capacity")
    limit = CAPACITY_SANITY_FACTOR * s.rated_capacity
    if np.any(s.capacity > limit):
        raise InvariantViolation(
            f"{s.battery_id}: capacity {s.capacity.max():.4g} exceeds {limit:.4g} "
            f"(1.2 x rated); check units")


def eol_capacity(series: CapacitySeries) -> float:
    """End-of-life threshold in ampere-hours."""
    return series.eol_fraction * series.rated_capacity


def from_pairs(battery_id, original_cycles, capacity, rated_capacity, eol_fraction=0.7):
    """Build a series from (cycle, capacity) pairs, re-indexing gaps densely."""
    orig = np.asarray(original_cycles, dtype=np.int64)
    cap = np.asarray(capacity, dtype=float)
    if orig.size == 0:
        raise InvariantViolation(f"{battery_id}: no cycles")
    if np.any(np.diff(orig) <= 0):
        bad = int(np.argmax(np.diff(orig) <= 0))
        raise InvariantViolation(
            f"{battery_id}: cycles not increasing ({orig[bad]} followed by {orig[bad + 1]})")
    if orig[0] < 1:
        raise InvariantViolation(f"{battery_id}: cycle index must be positive, got {orig[0]}")
    dense = np.arange(1, orig.size + 1)
    return CapacitySeries(battery_id, dense, cap, float(rated_capacity), float(eol_fraction),
                          original_cycles=orig)


def _read_rows(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty file", line=1)
    return rows


def _parse_float(text, line, column, what):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse {what} {text!r}", line=line, column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} {text!r}", line=line, column=column)
    return value


def _parse_int(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"cannot parse cycle index {text!r}", line=line, column=column) from None
    if not math.isfinite(value) or value != int(value):
        raise ParseError(f"cycle index {text!r} is not an integer", line=line, column=column)
    return int(value)


def _find_column(header, candidates, path, line):
    lowered = [h.strip().lower() for h in header]
    for c in candidates:
        if c.lower() in lowered:
            return lowered.index(c.lower())
    raise ParseError(f"{path}: none of the columns {list(candidates)} found in header", line=line)


def _load_generic(path):
    rows = _read_rows(path)
    line, header = rows[0]
    if tuple(h.strip().lower() for h in header) != GENERIC_HEADER:
        raise ParseError(f"expected header {','.join(GENERIC_HEADER)}, got {','.join(header)}", line=line)
    if len(rows) == 1:
        raise ParseError("no data rows", line=line)
    cycles, caps = [], []
    for line, row in rows[1:]:
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, got {len(row)}", line=line)
        cycles.append(_parse_int(row[0], line, 1))
        caps.append(_parse_float(row[1], line, 2, "capacity"))
    return cycles, caps


def _load_per_sample(path, cycle_cols, cap_cols, type_col=None, keep_type=None):
    """Reduce per-sample rows to the largest capacity reading per cycle."""
    rows = _read_rows(path)
    hline, header = rows[0]
    ci = _find_column(header, cycle_cols, path, hline)
    ki = _find_column(header, cap_cols, path, hline)
    ti = None
    if type_col is not None:
        lowered = [h.strip().lower() for h in header]
        ti = lowered.index(type_col) if type_col in lowered else None
    best = {}
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=line)
        if ti is not None and row[ti].strip().lower() != keep_type:
            continue
        if not row[ki].strip():
            continue
        cyc = _parse_int(row[ci], line, ci + 1)
        cap = _parse_float(row[ki], line, ki + 1, "capacity")
        if cyc not in best or cap > best[cyc]:
            best[cyc] = cap
    if not best:
        raise ParseError("no capacity records", line=hline)
    cycles = sorted(best)
    return cycles, [best[c] for c in cycles]


def load_cycle_data(path, format="generic_csv", *, rated_capacity, eol_fraction=0.7,
                    battery_id=None) -> CapacitySeries:
    """Read one battery's per-cycle capacity.

    Parameters
    ----------
    path : str or path-like
    format : {"generic_csv", "nasa_csv", "calce_csv"}
        ``generic_csv`` has the header ``cycle,capacity_ah`` and one row per
        cycle.  ``nasa_csv`` expects per-sample discharge records with a
        ``cycle`` and a ``capacity`` column (an optional ``type`` column is
        filtered to ``discharge``).  ``calce_csv`` expects Arbin exports with
        ``Cycle_Index`` and ``Discharge_Capacity(Ah)``.  Both raw formats keep
        the maximum capacity reading of each cycle.
    rated_capacity : float
        Nominal capacity in Ah.
    eol_fraction : float
        End-of-life threshold as a fraction of ``rated_capacity``.
    battery_id : str, optional
        Defaults to the file stem.
    """
    path = os.fspath(path)
    if format == "generic_csv":
        cycles, caps = _load_generic(path)
    elif format == "nasa_csv":
        cycles, caps = _load_per_sample(path, ("cycle", "cycle_index", "id_cycle"),
                                        ("capacity", "capacity_ah"), type_col="type",
                                        keep_type="discharge")
    elif format == "calce_csv":
        cycles, caps = _load_per_sample(path, ("cycle_index",),
                                        ("discharge_capacity(ah)", "discharge_capacity"))
    else:
        raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")
    bid = battery_id or os.path.splitext(os.path.basename(path))[0]
    return from_pairs(bid, cycles, caps, rated_capacity, eol_fraction)


def write_generic_csv(series: CapacitySeries, path, original_index=False):
    """Write ``series`` in the generic interchange format.

    Floats are written with ``repr`` so that reading the file back gives
    bit-identical capacities.
    """
    cycles = series.original_cycles if original_index else series.cycles
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(GENERIC_HEADER) + "\n")
        for c, q in zip(cycles, series.capacity):
            fh.write(f"{int(c)},{float(q)!r}\n")


@dataclass(frozen=True)
class FleetSplit:
    train: list
    test: CapacitySeries
    sp: int

    def __post_init__(self):
        if any(s.battery_id == self.test.battery_id for s in self.train):
            raise InvariantViolation(f"test battery {self.test.battery_id} also listed for training")
        if not (2 <= self.sp < int(self.test.cycles[-1])):
            raise SpOutOfRange(f"sp {self.sp} outside [2, {int(self.test.cycles[-1]) - 1}]")

    @property
    def observed(self) -> CapacitySeries:
        """The part of the test battery known at the start point."""
        return self.test.truncate(self.sp)


def split_fleet(batteries, test_id: str, sp: int) -> FleetSplit:
    """Leave-one-battery-out split.

    Training gets every other battery in full plus the test battery's
    cycles up to and including ``sp``, relabelled ``"<id>[1..<sp>]"``; the
    test entry is the full series.
    """
    ids = [b.battery_id for b in batteries]
    if test_id not in ids:
        raise UnknownBattery(f"battery {test_id!r} not in fleet {ids}")
    test = batteries[ids.index(test_id)]
    last = int(test.cycles[-1])
    if not (2 <= sp < last):
        raise SpOutOfRange(f"sp {sp} outside [2, {last - 1}] for {test_id}")
    train = [b for b in batteries if b.battery_id != test_id]
    train.append(test.truncate(sp, battery_id=f"{test_id}[1..{sp}]"))
    return FleetSplit(train=train, test=test, sp=int(sp))


def load_manifest(path):
    """Load every battery listed in an INI fleet manifest.

    Each section other than ``[fleet]`` names one battery::

        [fleet]
        eol_fraction = 0.7
        format = generic_csv

        [B0005]
        path = B0005.csv
        rated_capacity = 2.0

    Keys in ``[fleet]`` are defaults for the battery sections.  Relative
    paths resolve against the manifest's directory.  Batteries are returned
    in file order.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such manifest: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from None
    defaults = dict(parser["fleet"]) if parser.has_section("fleet") else {}
    base = os.path.dirname(os.path.abspath(path))
    fleet = []
    for name in parser.sections():
        if name == "fleet":
            continue
        entry = {**defaults, **dict(parser[name])}
        if "path" not in entry or "rated_capacity" not in entry:
            raise ParseError(f"{path}: battery [{name}] needs 'path' and 'rated_capacity'")
        file_path = entry["path"]
        if not os.path.isabs(file_path):
            file_path = os.path.join(base, file_path)
        try:
            rated = float(entry["rated_capacity"])
            frac = float(entry.get("eol_fraction", 0.7))
        except ValueError as exc:
            raise ParseError(f"{path}: battery [{name}]: {exc}") from None
        fleet.append(load_cycle_data(file_path, entry.get("format", "generic_csv"),
                                     rated_capacity=rated, eol_fraction=frac, battery_id=name))
    if not fleet:
        raise ParseError(f"{path}: manifest lists no batteries")
    return fleet


def write_manifest(path, entries, eol_fraction=0.7, format="generic_csv"):
    """Write a manifest; ``entries`` maps battery id to (file path, rated capacity[, eol_fraction])."""
    parser = configparser.ConfigParser()
    parser["fleet"] = {"eol_fraction": repr(float(eol_fraction)), "format": format}
    for bid, item in entries.items():
        section = {"path": str(item[0]), "rated_capacity": repr(float(item[1]))}
        if len(item) > 2:
            section["eol_fraction"] = repr(float(item[2]))
        parser[bid] = section
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)
