"""Well-data preparation: ingestion, filtering, compression, partitioning.

Input files are UTF-8 CSV with the exact header

    timestamp,p1_pa,p2_pa,t1_k,t2_k,choke_frac,qo_m3s,qg_m3s,qw_m3s

ISO-8601 UTC timestamps, ``.`` decimal separator, SI units throughout.
Mass fractions are never read from file; they are always derived from the
previous retained sample's measured rates (see
:func:`chokevfm.fluids.lagged_mass_fractions`), so the first sample of a
series carries no fractions and is dropped.

Preparation order: ingest -> filter -> steady-state compression -> lagged
fractions -> chronological split. The test partition is the tail of the
history; validation is drawn from the training window in whole two-week
chunks, mimicking how a deployed meter is recalibrated on past data and
judged on the future.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, IngestionError
from .fluids import OperatingPoint, PhysicalConstants, lagged_mass_fractions

CSV_HEADER = ("timestamp", "p1_pa", "p2_pa", "t1_k", "t2_k", "choke_frac", "qo_m3s", "qg_m3s", "qw_m3s")
SERIES_COLUMNS = ("timestamp", "p1", "p2", "t1", "t2", "u", "q_o", "q_g", "q_w")
ETA_COLUMNS = ("eta_g", "eta_o", "eta_w")

#: Fields whose stability defines a steady-state window.
STEADY_FIELDS = ("p1", "p2", "u")

DAY_SECONDS = 86400.0

RULE_PRESSURE = "nonpositive pressure"
RULE_TEMPERATURE = "nonpositive temperature"
RULE_OPENING = "choke opening outside [0, 1]"
RULE_NEGATIVE_FLOW = "negative flow rate"
RULE_ZERO_FLOW = "zero total flow"
RULE_REVERSED_DP = "reversed pressure differential"

FILTER_RULES = (
    RULE_PRESSURE,
    RULE_TEMPERATURE,
    RULE_OPENING,
    RULE_NEGATIVE_FLOW,
    RULE_ZERO_FLOW,
    RULE_REVERSED_DP,
)


def _parse_timestamp(text: str, row: int) -> float:
    try:
        stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise IngestionError(f"unparseable timestamp {text!r}", row=row) from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def format_timestamp(seconds: float) -> str:
    return datetime.fromtimestamp(seconds, tz=timezone.utc).isoformat()


def ingest(source) -> dict[str, np.ndarray]:
    """Read a well CSV into typed columns; timestamps must strictly increase.

    `source` is a path or an open text stream. Errors carry the offending
    file line (the header is line 1).
    """
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    if not lines:
        raise IngestionError("empty file", row=1)
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != CSV_HEADER:
        missing = [c for c in CSV_HEADER if c not in header]
        if missing:
            raise IngestionError(f"missing column(s): {', '.join(missing)}", row=1)
        raise IngestionError(f"unexpected header {','.join(header)}", row=1)

    values: list[list[float]] = []
    prev_t = -np.inf
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(CSV_HEADER):
            raise IngestionError(f"expected {len(CSV_HEADER)} fields, got {len(parts)}", row=line_no)
        t = _parse_timestamp(parts[0].strip(), line_no)
        row = [t]
        for name, text in zip(CSV_HEADER[1:], parts[1:]):
            try:
                row.append(float(text))
            except ValueError as exc:
                raise IngestionError(f"unparseable value {text!r} in column {name}", row=line_no) from exc
        if t == prev_t:
            raise IngestionError("duplicate timestamp", row=line_no)
        if t < prev_t:
            raise IngestionError("timestamps are not increasing", row=line_no)
        prev_t = t
        values.append(row)

    data = np.array(values, dtype=float).reshape(len(values), len(SERIES_COLUMNS))
    return {name: data[:, i].copy() for i, name in enumerate(SERIES_COLUMNS)}


def write_csv(columns: Mapping[str, np.ndarray], path, partition: np.ndarray | None = None) -> None:
    """Write a series in the input schema; optionally append partition labels."""
    header = ",".join(CSV_HEADER) + (",partition" if partition is not None else "")
    n = len(columns["timestamp"])
    rows = [header]
    for i in range(n):
        cells = [format_timestamp(float(columns["timestamp"][i]))]
        for name in SERIES_COLUMNS[1:]:
            cells.append(repr(float(columns[name][i])))
        if partition is not None:
            cells.append(str(partition[i]))
        rows.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


@dataclass
class FilterReport:
    """Which samples a filtering pass dropped, and why."""

    n_input: int
    counts: dict[str, int] = field(default_factory=dict)
    dropped_rows: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_dropped(self) -> int:
        return len(self.dropped_rows)

    @property
    def n_retained(self) -> int:
        return self.n_input - self.n_dropped

    @property
    def retained_fraction(self) -> float:
        return self.n_retained / self.n_input if self.n_input else 1.0

    def to_text(self) -> str:
        lines = [
            "chokevfm-filter-report 1",
            f"input {self.n_input}",
            f"retained {self.n_retained}",
            f"retained_fraction {self.retained_fraction!r}",
        ]
        for rule in FILTER_RULES:
            lines.append(f"rule {self.counts.get(rule, 0)} {rule}")
        for index, rule in self.dropped_rows:
            lines.append(f"dropped {index} {rule}")
        return "\n".join(lines) + "\n"


def _violated_rule(cols: Mapping[str, np.ndarray], i: int) -> str | None:
    if cols["p1"][i] <= 0.0 or cols["p2"][i] <= 0.0:
        return RULE_PRESSURE
    if cols["t1"][i] <= 0.0 or cols["t2"][i] <= 0.0:
        return RULE_TEMPERATURE
    if not 0.0 <= cols["u"][i] <= 1.0:
        return RULE_OPENING
    if cols["q_o"][i] < 0.0 or cols["q_g"][i] < 0.0 or cols["q_w"][i] < 0.0:
        return RULE_NEGATIVE_FLOW
    if cols["q_o"][i] + cols["q_g"][i] + cols["q_w"][i] <= 0.0:
        return RULE_ZERO_FLOW
    if cols["p2"][i] > cols["p1"][i]:
        return RULE_REVERSED_DP
    return None


def filter_samples(cols: Mapping[str, np.ndarray]) -> tuple[dict[str, np.ndarray], FilterReport]:
    """Drop samples that cannot come from a healthy flowing choke.

    A sample violating several rules is attributed to the first rule in
    ``FILTER_RULES`` order, so the per-rule counts sum to the dropped total.
    """
    n = len(cols["timestamp"])
    report = FilterReport(n_input=n)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        rule = _violated_rule(cols, i)
        if rule is not None:
            keep[i] = False
            report.counts[rule] = report.counts.get(rule, 0) + 1
            report.dropped_rows.append((i, rule))
    return subset_columns(cols, np.flatnonzero(keep)), report


class _SteadyWindow:
    """Incremental max-min/median tracker for the steadiness predicate."""

    def __init__(self, cols: Mapping[str, np.ndarray], start: int, tolerance: float):
        self.cols = cols
        self.tolerance = tolerance
        self.sorted: dict[str, list[float]] = {
            f: [float(cols[f][start])] for f in STEADY_FIELDS
        }

    def _field_ok(self, values: list[float]) -> bool:
        k = len(values)
        median = values[k // 2] if k % 2 else 0.5 * (values[k // 2 - 1] + values[k // 2])
        return values[-1] - values[0] <= self.tolerance * abs(median)

    def try_add(self, index: int) -> bool:
        inserted = []
        ok = True
        for f in STEADY_FIELDS:
            v = float(self.cols[f][index])
            pos = bisect.bisect_right(self.sorted[f], v)
            self.sorted[f].insert(pos, v)
            inserted.append((f, pos))
            if not self._field_ok(self.sorted[f]):
                ok = False
        if not ok:
            for f, pos in inserted:
                del self.sorted[f][pos]
        return ok


def steady_state_compress(
    cols: Mapping[str, np.ndarray], window_seconds: float, tolerance: float
) -> dict[str, np.ndarray]:
    """Collapse steady operating windows to single median points.

    A window is steady when max-min of each of p1, p2, u stays within
    `tolerance` of the field's window median. Samples are greedily grown
    into maximal steady runs capped at `window_seconds`; each run of two or
    more samples collapses to its per-field medians, stamped with the run's
    last timestamp. A sample with no neighbor inside the window on either
    side passes through unchanged (sparse data cannot be judged); a lone
    sample with a close neighbor is dropped as transient.
    """
    if window_seconds <= 0.0:
        raise ConfigurationError(f"window must be positive, got {window_seconds}")
    if tolerance < 0.0:
        raise ConfigurationError(f"tolerance must be nonnegative, got {tolerance}")
    t = np.asarray(cols["timestamp"], dtype=float)
    n = t.size
    names = [c for c in cols]
    out: dict[str, list[float]] = {c: [] for c in names}

    i = 0
    while i < n:
        window = _SteadyWindow(cols, i, tolerance)
        j = i
        predicate_broke = False
        while j + 1 < n:
            if t[j + 1] - t[i] >= window_seconds:
                break
            if not window.try_add(j + 1):
                predicate_broke = True
                break
            j += 1
        if j > i:
            for c in names:
                block = np.asarray(cols[c][i : j + 1], dtype=float)
                out[c].append(float(t[j]) if c == "timestamp" else float(np.median(block)))
        else:
            isolated_before = i == 0 or t[i] - t[i - 1] >= window_seconds
            if isolated_before and not predicate_broke:
                for c in names:
                    out[c].append(float(cols[c][i]))
        i = j + 1

    return {c: np.array(v, dtype=float) for c, v in out.items()}


def attach_lagged_fractions(
    cols: Mapping[str, np.ndarray], constants: PhysicalConstants
) -> tuple[dict[str, np.ndarray], int]:
    """Derive each sample's mass fractions from its predecessor's rates.

    The first sample (no predecessor) and samples whose predecessor carried
    zero total flow are dropped; the second return value counts them.
    """
    n = len(cols["timestamp"])
    keep: list[int] = []
    etas = {c: [] for c in ETA_COLUMNS}
    for i in range(1, n):
        prev = OperatingPoint(
            timestamp=float(cols["timestamp"][i - 1]),
            p1=float(cols["p1"][i - 1]),
            p2=float(cols["p2"][i - 1]),
            t1=float(cols["t1"][i - 1]),
            t2=float(cols["t2"][i - 1]),
            u=float(cols["u"][i - 1]),
            q_o=float(cols["q_o"][i - 1]),
            q_g=float(cols["q_g"][i - 1]),
            q_w=float(cols["q_w"][i - 1]),
        )
        fractions = lagged_mass_fractions(prev, constants)
        if fractions is None:
            continue
        keep.append(i)
        etas["eta_g"].append(fractions[0])
        etas["eta_o"].append(fractions[1])
        etas["eta_w"].append(fractions[2])
    out = subset_columns(cols, np.array(keep, dtype=int))
    for c in ETA_COLUMNS:
        out[c] = np.array(etas[c], dtype=float)
    return out, n - len(keep)


def subset_columns(cols: Mapping[str, np.ndarray], idx) -> dict[str, np.ndarray]:
    idx = np.asarray(idx)
    return {c: np.asarray(v)[idx] for c, v in cols.items()}


@dataclass
class WellDataset:
    """Time-ordered, model-ready samples for one well."""

    well_id: str
    columns: dict[str, np.ndarray]
    partition: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.columns["timestamp"])

    def mask(self, label: str) -> np.ndarray:
        if self.partition is None:
            raise ConfigurationError("dataset is not partitioned")
        return self.partition == label

    def subset(self, idx) -> "WellDataset":
        part = self.partition[np.asarray(idx)] if self.partition is not None else None
        return WellDataset(self.well_id, subset_columns(self.columns, idx), part, dict(self.meta))

    def model_columns(self) -> dict[str, np.ndarray]:
        names = ("p1", "p2", "t1", "t2", "u", "eta_g", "eta_o", "eta_w")
        missing = [c for c in names if c not in self.columns]
        if missing:
            raise ConfigurationError(f"dataset lacks derived column(s): {', '.join(missing)}")
        return {c: self.columns[c] for c in names}

    def points(self) -> Iterator[OperatingPoint]:
        for i in range(self.n):
            yield OperatingPoint(
                timestamp=float(self.columns["timestamp"][i]),
                p1=float(self.columns["p1"][i]),
                p2=float(self.columns["p2"][i]),
                t1=float(self.columns["t1"][i]),
                t2=float(self.columns["t2"][i]),
                u=float(self.columns["u"][i]),
                eta_g=float(self.columns.get("eta_g", np.zeros(self.n))[i]),
                eta_o=float(self.columns.get("eta_o", np.zeros(self.n))[i]),
                eta_w=float(self.columns.get("eta_w", np.zeros(self.n))[i]),
                q_o=float(self.columns["q_o"][i]),
                q_g=float(self.columns["q_g"][i]),
                q_w=float(self.columns["q_w"][i]),
            )


def draw_validation_chunks(
    timestamps: np.ndarray, fraction: float, chunk_seconds: float, seed
) -> np.ndarray:
    """Mark whole chronological chunks as validation until `fraction` is met.

    Chunks are `chunk_seconds` intervals anchored at the first timestamp;
    whole chunks are drawn in seeded random order until at least
    ``fraction * len(timestamps)`` samples are marked.
    """
    t = np.asarray(timestamps, dtype=float)
    mask = np.zeros(t.size, dtype=bool)
    if fraction <= 0.0 or t.size == 0:
        return mask
    span = t.max() - t.min()
    if span < chunk_seconds:
        raise ConfigurationError(
            f"window of {span / DAY_SECONDS:.1f} days cannot hold one "
            f"{chunk_seconds / DAY_SECONDS:.0f}-day validation chunk"
        )
    chunk_index = np.floor((t - t.min()) / chunk_seconds).astype(int)
    unique = np.unique(chunk_index)
    target = int(np.ceil(fraction * t.size))
    rng = np.random.default_rng(seed)
    order = rng.permutation(unique)
    marked = 0
    for chunk in order:
        if marked >= target:
            break
        members = chunk_index == chunk
        mask |= members
        marked += int(members.sum())
    return mask


def split(
    dataset: WellDataset,
    test_span_days: float = 90.0,
    validation_fraction: float = 0.2,
    chunk_days: float = 14.0,
    seed=0,
) -> WellDataset:
    """Label samples train/validation/test; the test set is the latest span.

    Validation chunks drawn here give a default partition; the training
    protocol redraws them per early-stopping repetition from the same
    training window.
    """
    t = dataset.columns["timestamp"]
    if t.size == 0:
        raise ConfigurationError("empty dataset")
    span = t.max() - t.min()
    test_span = test_span_days * DAY_SECONDS
    if span <= test_span:
        raise ConfigurationError(
            f"dataset spans {span / DAY_SECONDS:.1f} days, needs more than {test_span_days}"
        )
    cutoff = t.max() - test_span
    partition = np.array(["train"] * dataset.n, dtype="<U10")
    partition[t > cutoff] = "test"
    region = np.flatnonzero(partition == "train")
    if validation_fraction > 0.0:
        val_mask = draw_validation_chunks(
            t[region], validation_fraction, chunk_days * DAY_SECONDS, seed
        )
        partition[region[val_mask]] = "validation"
    return WellDataset(dataset.well_id, dict(dataset.columns), partition, dict(dataset.meta))


def prepare_well(
    source,
    well_id: str = "well",
    *,
    window_seconds: float = 3600.0,
    tolerance: float = 0.02,
    constants: PhysicalConstants | None = None,
) -> tuple[WellDataset, FilterReport]:
    """Full preparation chain from a CSV source to a model-ready dataset."""
    constants = constants or PhysicalConstants()
    raw = ingest(source) if not isinstance(source, dict) else dict(source)
    filtered, report = filter_samples(raw)
    compressed = steady_state_compress(filtered, window_seconds, tolerance)
    final, lag_dropped = attach_lagged_fractions(compressed, constants)
    dataset = WellDataset(well_id, final)
    dataset.meta["lag_dropped"] = lag_dropped
    dataset.meta["filter_retained_fraction"] = report.retained_fraction
    return dataset, report
