"""Columnar measurement tables: CSV I/O, day-based splits, cohort filters and
training-only normalization statistics.

A :class:`Dataset` stores one row per (AAU, hour). Carrier attributes are
held as ``(n_rows, c_max)`` arrays; only the first ``C`` slots of a row are
present, the remaining slots are all-zero padding.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

CARRIER_FIELDS = ("present", "tx_mode", "freq_mhz", "bw_mhz", "pmax_w",
                  "load", "dcs", "dchs", "dss", "ddd")
CARRIER_NUMERIC = ("freq_mhz", "bw_mhz", "pmax_w", "load", "dcs", "dchs", "dss", "ddd")
FRACTION_FIELDS = ("load", "dcs", "dchs", "dss", "ddd")

# Column suffixes as they appear in the CSV header, in block order.
_CSV_SUFFIX = {
    "present": "present", "tx_mode": "tx_mode", "freq_mhz": "freq_mhz",
    "bw_mhz": "bw_mhz", "pmax_w": "pmax_w", "load": "load", "dcs": "dcs",
    "dchs": "dchs", "dss": "dss", "ddd": "ddd",
}

TARGET_HEADROOM = 1.2


class DatasetFormatError(ValueError):
    """Malformed CSV input; carries the offending row number and column."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class SplitError(ValueError):
    """A split configuration that would leave a partition empty or is inconsistent."""


def csv_columns(c_max: int) -> list[str]:
    cols = ["aau_id", "type_id", "day", "hour", "num_trx"]
    for k in range(c_max):
        cols.extend(f"c{k}_{_CSV_SUFFIX[f]}" for f in CARRIER_FIELDS)
    cols.extend(["power_w", "true_power_w"])
    return cols


@dataclass
class CarrierState:
    """One carrier slot of a :class:`SampleRecord`."""

    tx_mode: str
    freq_mhz: float
    bw_mhz: float
    pmax_w: float
    load: float
    dcs: float = 0.0
    dchs: float = 0.0
    dss: float = 0.0
    ddd: float = 0.0


@dataclass
class SampleRecord:
    """One hourly measurement of one AAU."""

    aau_id: int
    type_id: str
    day: int
    hour: int
    num_trx: int
    carriers: list[CarrierState]
    power_w: float
    true_power_w: float = math.nan

    @property
    def n_carriers(self) -> int:
        return len(self.carriers)


@dataclass
class Dataset:
    aau_id: np.ndarray
    type_id: np.ndarray
    day: np.ndarray
    hour: np.ndarray
    num_trx: np.ndarray
    present: np.ndarray
    tx_mode: np.ndarray
    freq_mhz: np.ndarray
    bw_mhz: np.ndarray
    pmax_w: np.ndarray
    load: np.ndarray
    dcs: np.ndarray
    dchs: np.ndarray
    dss: np.ndarray
    ddd: np.ndarray
    power_w: np.ndarray
    true_power_w: np.ndarray

    def __post_init__(self):
        n = len(self.aau_id)
        for f in fields(self):
            arr = getattr(self, f.name)
            if len(arr) != n:
                raise ValueError(f"column {f.name} has {len(arr)} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.aau_id)

    @property
    def c_max(self) -> int:
        return self.present.shape[1]

    @property
    def n_carriers(self) -> np.ndarray:
        return self.present.sum(axis=1)

    @property
    def has_carrier_shutdown(self) -> np.ndarray:
        return (self.dcs > 0).any(axis=1)

    @property
    def row_keys(self) -> np.ndarray:
        """(aau_id, day, hour) packed into one integer per row."""
        return (self.aau_id.astype(np.int64) * 1_000_000
                + self.day.astype(np.int64) * 100 + self.hour.astype(np.int64))

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})

    def with_c_max(self, c_max: int) -> "Dataset":
        """Re-pad (or trim empty) carrier slots to ``c_max`` columns."""
        if c_max < int(self.n_carriers.max(initial=0)):
            raise ValueError(f"rows carry more than {c_max} carriers")
        out = {}
        for f in fields(self):
            arr = getattr(self, f.name)
            if f.name in CARRIER_FIELDS:
                if arr.shape[1] >= c_max:
                    arr = arr[:, :c_max]
                else:
                    pad = np.zeros((len(arr), c_max - arr.shape[1]), dtype=arr.dtype)
                    arr = np.concatenate([arr, pad], axis=1)
            out[f.name] = arr
        return Dataset(**out)

    def equals(self, other: "Dataset") -> bool:
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if a.shape != b.shape:
                return False
            if a.dtype.kind == "f":
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif not np.array_equal(a, b):
                return False
        return True

    def record(self, i: int) -> SampleRecord:
        carriers = []
        for k in range(self.c_max):
            if not self.present[i, k]:
                break
            carriers.append(CarrierState(
                tx_mode=str(self.tx_mode[i, k]),
                freq_mhz=float(self.freq_mhz[i, k]), bw_mhz=float(self.bw_mhz[i, k]),
                pmax_w=float(self.pmax_w[i, k]), load=float(self.load[i, k]),
                dcs=float(self.dcs[i, k]), dchs=float(self.dchs[i, k]),
                dss=float(self.dss[i, k]), ddd=float(self.ddd[i, k]),
            ))
        return SampleRecord(
            aau_id=int(self.aau_id[i]), type_id=str(self.type_id[i]),
            day=int(self.day[i]), hour=int(self.hour[i]), num_trx=int(self.num_trx[i]),
            carriers=carriers, power_w=float(self.power_w[i]),
            true_power_w=float(self.true_power_w[i]),
        )

    def records(self) -> list[SampleRecord]:
        return [self.record(i) for i in range(len(self))]

    @classmethod
    def empty(cls, c_max: int) -> "Dataset":
        return cls.from_records([], c_max)

    @classmethod
    def from_records(cls, records: Sequence[SampleRecord], c_max: int) -> "Dataset":
        n = len(records)
        cols = {
            "aau_id": np.array([r.aau_id for r in records], dtype=np.int64),
            "type_id": np.array([r.type_id for r in records], dtype=object),
            "day": np.array([r.day for r in records], dtype=np.int64),
            "hour": np.array([r.hour for r in records], dtype=np.int64),
            "num_trx": np.array([r.num_trx for r in records], dtype=np.int64),
            "power_w": np.array([r.power_w for r in records], dtype=np.float64),
            "true_power_w": np.array([r.true_power_w for r in records], dtype=np.float64),
            "present": np.zeros((n, c_max), dtype=bool),
            "tx_mode": np.full((n, c_max), "", dtype=object),
        }
        for name in CARRIER_NUMERIC:
            cols[name] = np.zeros((n, c_max))
        for i, r in enumerate(records):
            if len(r.carriers) > c_max:
                raise ValueError(f"record {i} has {len(r.carriers)} carriers > c_max={c_max}")
            for k, c in enumerate(r.carriers):
                cols["present"][i, k] = True
                cols["tx_mode"][i, k] = c.tx_mode
                for name in CARRIER_NUMERIC:
                    cols[name][i, k] = getattr(c, name)
        return cls(**cols)


def concat(parts: Iterable[Dataset]) -> Dataset:
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to concatenate")
    c_max = max(p.c_max for p in parts)
    parts = [p.with_c_max(c_max) for p in parts]
    return Dataset(**{f.name: np.concatenate([getattr(p, f.name) for p in parts])
                      for f in fields(Dataset)})


# ── CSV ────────────────────────────────────────────────────────────────


def _fmt(x: float) -> str:
    if math.isnan(x):
        return ""
    return format(x, ".17g")


def write_csv(ds: Dataset, path) -> None:
    c_max = ds.c_max
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_columns(c_max))
        for i in range(len(ds)):
            row = [str(int(ds.aau_id[i])), str(ds.type_id[i]), str(int(ds.day[i])),
                   str(int(ds.hour[i])), str(int(ds.num_trx[i]))]
            for k in range(c_max):
                row.append("1" if ds.present[i, k] else "0")
                row.append(str(ds.tx_mode[i, k]))
                row.extend(_fmt(float(getattr(ds, name)[i, k])) for name in CARRIER_NUMERIC)
            row.append(_fmt(float(ds.power_w[i])))
            row.append(_fmt(float(ds.true_power_w[i])))
            w.writerow(row)


def _c_max_from_header(header: list[str]) -> int:
    n_block = len(header) - 7
    if n_block < 0 or n_block % len(CARRIER_FIELDS):
        # Name the first expected column that is missing, if any.
        for k in range(max(1, n_block // len(CARRIER_FIELDS) + 1)):
            for col in csv_columns(k + 1):
                if col not in header:
                    raise DatasetFormatError("missing column", row=1, column=col)
        raise DatasetFormatError(f"unexpected column count {len(header)}", row=1)
    return n_block // len(CARRIER_FIELDS)


def read_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file", row=1) from None
        c_max = _c_max_from_header(header)
        expected = csv_columns(c_max)
        for col in expected:
            if col not in header:
                raise DatasetFormatError("missing column", row=1, column=col)
        if header != expected:
            bad = next(i for i, (a, b) in enumerate(zip(header, expected)) if a != b)
            raise DatasetFormatError(f"expected {expected[bad]!r}, found {header[bad]!r}",
                                     row=1, column=header[bad])

        rows = list(reader)
    n = len(rows)
    cols = {
        "aau_id": np.zeros(n, dtype=np.int64), "type_id": np.empty(n, dtype=object),
        "day": np.zeros(n, dtype=np.int64), "hour": np.zeros(n, dtype=np.int64),
        "num_trx": np.zeros(n, dtype=np.int64),
        "present": np.zeros((n, c_max), dtype=bool),
        "tx_mode": np.full((n, c_max), "", dtype=object),
        "power_w": np.zeros(n), "true_power_w": np.zeros(n),
    }
    for name in CARRIER_NUMERIC:
        cols[name] = np.zeros((n, c_max))

    def parse(text, conv, rownum, col, optional=False):
        if optional and text == "":
            return math.nan
        try:
            return conv(text)
        except ValueError:
            raise DatasetFormatError(f"cannot parse {text!r}", row=rownum, column=col) from None

    width = len(expected)
    for i, row in enumerate(rows):
        rownum = i + 2
        if len(row) != width:
            col = expected[min(len(row), width - 1)]
            raise DatasetFormatError(f"expected {width} fields, found {len(row)}",
                                     row=rownum, column=col)
        cols["aau_id"][i] = parse(row[0], int, rownum, "aau_id")
        cols["type_id"][i] = row[1]
        cols["day"][i] = parse(row[2], int, rownum, "day")
        cols["hour"][i] = parse(row[3], int, rownum, "hour")
        cols["num_trx"][i] = parse(row[4], int, rownum, "num_trx")
        j = 5
        for k in range(c_max):
            flag = row[j]
            if flag not in ("0", "1"):
                raise DatasetFormatError(f"present flag must be 0 or 1, found {flag!r}",
                                         row=rownum, column=expected[j])
            cols["present"][i, k] = flag == "1"
            cols["tx_mode"][i, k] = row[j + 1]
            for m, name in enumerate(CARRIER_NUMERIC):
                cols[name][i, k] = parse(row[j + 2 + m], float, rownum, expected[j + 2 + m])
            j += len(CARRIER_FIELDS)
        cols["power_w"][i] = parse(row[j], float, rownum, "power_w")
        cols["true_power_w"][i] = parse(row[j + 1], float, rownum, "true_power_w", optional=True)
    return Dataset(**cols)


# ── Splits and cohorts ─────────────────────────────────────────────────


@dataclass
class SplitSpec:
    train_days: list[int]
    test_days: list[int]
    val_fraction: float = 0.2

    def __post_init__(self):
        if set(self.train_days) & set(self.test_days):
            raise SplitError("train and test days overlap")
        if not 0.0 < self.val_fraction < 1.0:
            raise SplitError(f"val_fraction must be in (0, 1), got {self.val_fraction}")

    @classmethod
    def by_count(cls, n_days: int, n_test_days: int, val_fraction: float = 0.2) -> "SplitSpec":
        """Last ``n_test_days`` days form the test set."""
        if not 1 <= n_test_days < n_days:
            raise SplitError(f"need 1 <= n_test_days < n_days, got {n_test_days}, {n_days}")
        return cls(list(range(n_days - n_test_days)),
                   list(range(n_days - n_test_days, n_days)), val_fraction)


def split(ds: Dataset, spec: SplitSpec, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Test rows by day; remaining training-day rows split row-wise into train/val."""
    days_present = set(np.unique(ds.day).tolist())
    missing = (set(spec.train_days) | set(spec.test_days)) - days_present
    if missing:
        raise SplitError(f"days {sorted(missing)} not in dataset")
    test_mask = np.isin(ds.day, spec.test_days)
    pool = np.flatnonzero(np.isin(ds.day, spec.train_days))
    n_val = int(round(spec.val_fraction * len(pool)))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pool))
    val_idx = np.sort(pool[perm[:n_val]])
    train_idx = np.sort(pool[perm[n_val:]])
    test_idx = np.flatnonzero(test_mask)
    for name, idx in (("train", train_idx), ("val", val_idx), ("test", test_idx)):
        if len(idx) == 0:
            raise SplitError(f"{name} partition is empty")
    return ds.take(train_idx), ds.take(val_idx), ds.take(test_idx)


def row_mask(ds: Dataset, type_id=None, carrier_count=None,
             has_carrier_shutdown: bool | None = None) -> np.ndarray:
    """Boolean row mask; ``type_id``/``carrier_count`` accept a value or a collection."""
    mask = np.ones(len(ds), dtype=bool)
    if type_id is not None:
        wanted = [type_id] if isinstance(type_id, str) else list(type_id)
        mask &= np.isin(ds.type_id.astype(str), wanted)
    if carrier_count is not None:
        wanted = [carrier_count] if np.isscalar(carrier_count) else list(carrier_count)
        mask &= np.isin(ds.n_carriers, wanted)
    if has_carrier_shutdown is not None:
        mask &= ds.has_carrier_shutdown == has_carrier_shutdown
    return mask


def filter(ds: Dataset, predicate: Callable[[Dataset], np.ndarray] | None = None,
           **criteria) -> Dataset:
    """Order-preserving row filter.

    Either pass keyword criteria understood by :func:`row_mask`, or a callable
    mapping the dataset to a boolean mask, or both (ANDed).
    """
    mask = row_mask(ds, **criteria)
    if predicate is not None:
        mask &= np.asarray(predicate(ds), dtype=bool)
    return ds.take(np.flatnonzero(mask))


# ── Normalization statistics ───────────────────────────────────────────


@dataclass
class NormStats:
    """Min-max ranges from training rows.

    Carrier features are pooled over present slots. ``feature_min``/``feature_max``
    are keyed by feature name; a feature with ``max == min`` is constant and
    encodes to 0.
    """

    feature_min: dict[str, float]
    feature_max: dict[str, float]
    power_min_w: float
    power_max_w: float
    headroom: float = TARGET_HEADROOM
    observed_power_max_w: float = field(default=math.nan)

    def is_constant(self, name: str) -> bool:
        return not self.feature_max[name] > self.feature_min[name]

    def scale(self, name: str, values):
        """Map raw values into [0, 1]; values outside the training range are clipped."""
        lo, hi = self.feature_min[name], self.feature_max[name]
        values = np.asarray(values, dtype=np.float64)
        if not hi > lo:
            return np.zeros_like(values)
        return np.clip((values - lo) / (hi - lo), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "feature_min": dict(self.feature_min), "feature_max": dict(self.feature_max),
            "power_min_w": self.power_min_w, "power_max_w": self.power_max_w,
            "headroom": self.headroom, "observed_power_max_w": self.observed_power_max_w,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(feature_min={k: float(v) for k, v in d["feature_min"].items()},
                   feature_max={k: float(v) for k, v in d["feature_max"].items()},
                   power_min_w=float(d["power_min_w"]), power_max_w=float(d["power_max_w"]),
                   headroom=float(d["headroom"]),
                   observed_power_max_w=float(d["observed_power_max_w"]))


NORMALIZED_FEATURES = ("num_trx",) + CARRIER_NUMERIC


def compute_norm_stats(train: Dataset, headroom: float = TARGET_HEADROOM) -> NormStats:
    if len(train) == 0:
        raise ValueError("cannot compute normalization statistics from an empty set")
    lo, hi = {}, {}
    nt = train.num_trx.astype(np.float64)
    lo["num_trx"], hi["num_trx"] = float(nt.min()), float(nt.max())
    present = train.present
    for name in CARRIER_NUMERIC:
        vals = getattr(train, name)[present]
        lo[name], hi[name] = float(vals.min()), float(vals.max())
    observed = float(train.power_w.max())
    return NormStats(lo, hi, power_min_w=0.0, power_max_w=headroom * observed,
                     headroom=headroom, observed_power_max_w=observed)
