"""Dataset intake: CSV validation, schema inference, roles, and plot data.

Uploads are RFC-4180 CSVs with a header row.  Column kinds are inferred
deterministically: datetime if at least 95% of non-empty cells parse as
ISO-8601, else numeric if at least 95% parse as decimal numbers, else
categorical.  Raw bytes are stored verbatim under ``{owner_id}/{filename}``.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

from . import timebase
from .errors import (
    BadName,
    DuplicateTimestamps,
    MixedKinds,
    MultipleGrouping,
    MultipleTime,
    NoTarget,
    NoTime,
    TooLarge,
    TypeMismatch,
    UnknownColumn,
    Unparseable,
)
from .metastore import MetadataStore, new_id
from .storage import ObjectStore

MAX_UPLOAD_BYTES = 100 * 1024 * 1024
MAX_FILENAME_LEN = 128
_FILENAME_RE = re.compile(r"^[A-Za-z0-9._ -]+$")
KIND_THRESHOLD = 0.95

ROLES = ("not_included", "time", "grouping", "target",
         "past_covariate", "future_covariate", "static_covariate")


@dataclass
class ColumnInfo:
    name: str
    inferred_kind: str  # numeric | categorical | datetime

    def to_json(self) -> dict:
        return {"name": self.name, "inferred_kind": self.inferred_kind}


@dataclass
class ParsedCsv:
    header: list[str]
    rows: list[list[str]] = field(default_factory=list)

    @property
    def row_count(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[str]:
        try:
            idx = self.header.index(name)
        except ValueError:
            raise UnknownColumn(f"no column named {name!r}", field=name)
        return [row[idx] for row in self.rows]


def parse_csv(raw: bytes) -> ParsedCsv:
    """Parse bytes as a comma-delimited, header-first CSV.

    Rejects missing headers, ragged rows, duplicate or empty column names,
    and files with zero data rows.
    """
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError:
        raise Unparseable("file is not valid UTF-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise Unparseable("empty file: no header row")
    header = [h.strip() for h in header]
    if not header or any(not h for h in header):
        raise Unparseable("header row has empty column names")
    if len(set(header)) != len(header):
        raise Unparseable("duplicate column names in header")
    rows = []
    for i, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise Unparseable(f"row {i} has {len(row)} cells, expected {len(header)}")
        rows.append(row)
    if not rows:
        raise Unparseable("no data rows")
    return ParsedCsv(header=header, rows=rows)


def infer_kind(values: list[str]) -> str:
    """Deterministic cell-content kind for one column."""
    non_empty = [v for v in values if v.strip()]
    if not non_empty:
        return "categorical"
    n = len(non_empty)
    dt_hits = sum(1 for v in non_empty if timebase.parse_timestamp(v) is not None)
    if dt_hits / n >= KIND_THRESHOLD:
        return "datetime"
    num_hits = sum(1 for v in non_empty if timebase.parse_number(v) is not None)
    if num_hits / n >= KIND_THRESHOLD:
        return "numeric"
    return "categorical"


def extract_columns(parsed: ParsedCsv) -> list[ColumnInfo]:
    return [ColumnInfo(name, infer_kind(parsed.column(name))) for name in parsed.header]


def validate_filename(filename: str) -> None:
    if not filename or len(filename) > MAX_FILENAME_LEN:
        raise BadName(f"filename must be 1-{MAX_FILENAME_LEN} characters", field="filename")
    if not _FILENAME_RE.match(filename):
        raise BadName("filename may only contain letters, digits, '.', '_', ' ', '-'",
                      field="filename")


def validate_and_register(raw: bytes, owner_id: str, filename: str,
                          meta: MetadataStore, store: ObjectStore,
                          max_bytes: int = MAX_UPLOAD_BYTES) -> dict:
    """Validate an upload, persist bytes + metadata, return the DatasetRecord.

    The metadata row is inserted first: its unique (owner, filename)
    constraint is what makes duplicate detection atomic.  The object write
    follows; on store failure the row is removed again.
    """
    validate_filename(filename)
    if len(raw) > max_bytes:
        raise TooLarge(f"upload is {len(raw)} bytes, limit {max_bytes}", field="file")
    parsed = parse_csv(raw)
    columns = extract_columns(parsed)
    dataset_id = new_id("ds")
    uploaded_at = datetime.now(timezone.utc).isoformat()
    meta.insert_dataset(dataset_id, owner_id, filename, uploaded_at,
                        len(raw), parsed.row_count, [c.to_json() for c in columns])
    try:
        store.put(f"{owner_id}/{filename}", raw)
    except Exception:
        with meta._connect() as con:
            con.execute("DELETE FROM datasets WHERE dataset_id=?", (dataset_id,))
        raise
    return meta.get_dataset(dataset_id)


def _column_kinds(record: dict) -> dict[str, str]:
    return {c["name"]: c["inferred_kind"] for c in record["columns"]}


def validate_roles(record: dict, parsed: ParsedCsv, proposed: dict[str, str]) -> dict[str, str]:
    """Validate a proposed column->role map against the dataset schema.

    Check order matters: time problems are reported before missing targets.
    """
    kinds = _column_kinds(record)
    for name in proposed:
        if name not in kinds:
            raise UnknownColumn(f"no column named {name!r}", field=name)
    for name in kinds:
        if name not in proposed:
            raise UnknownColumn(f"column {name!r} missing from assignment", field=name)
    for name, role in proposed.items():
        if role not in ROLES:
            raise UnknownColumn(f"unknown role {role!r} for column {name!r}", field=name)

    time_cols = [n for n, r in proposed.items() if r == "time"]
    if not time_cols:
        raise NoTime("exactly one column must have the time role")
    if len(time_cols) > 1:
        raise MultipleTime(f"multiple time columns: {time_cols}")
    target_cols = [n for n, r in proposed.items() if r == "target"]
    if not target_cols:
        raise NoTarget("at least one column must be a target")
    group_cols = [n for n, r in proposed.items() if r == "grouping"]
    if len(group_cols) > 1:
        raise MultipleGrouping(f"multiple grouping columns: {group_cols}")

    time_col = time_cols[0]
    if kinds[time_col] == "numeric":
        for v in parsed.column(time_col):
            num = timebase.parse_number(v)
            if num is not None and num != int(num):
                raise TypeMismatch(
                    f"time column {time_col!r} must be datetime or integer", field=time_col)
    elif kinds[time_col] != "datetime":
        raise TypeMismatch(f"time column {time_col!r} is {kinds[time_col]}", field=time_col)

    for name, role in proposed.items():
        if role in ("target", "past_covariate", "future_covariate"):
            if kinds[name] != "numeric":
                raise TypeMismatch(
                    f"column {name!r} has role {role} but is {kinds[name]}", field=name)
    return dict(proposed)


def assign_roles(dataset_id: str, proposed: dict[str, str],
                 meta: MetadataStore, store: ObjectStore) -> dict[str, str]:
    """Validate and persist a role assignment.  Idempotent on re-submission."""
    record = meta.get_dataset(dataset_id)
    if record is None:
        raise UnknownColumn(f"no dataset {dataset_id!r}")
    raw = store.get(f"{record['owner_id']}/{record['filename']}")
    parsed = parse_csv(raw)
    validated = validate_roles(record, parsed, proposed)
    meta.set_roles(dataset_id, validated)
    return validated


def time_values(parsed: ParsedCsv, column: str, kind: str) -> list:
    """Parse a time column to datetimes or numbers, skipping empty cells."""
    out = []
    for v in parsed.column(column):
        if not v.strip():
            out.append(None)
            continue
        if kind == "datetime":
            t = timebase.parse_timestamp(v)
        else:
            t = timebase.parse_number(v)
        if t is None:
            raise TypeMismatch(f"unparseable time value {v!r}", field=column)
        out.append(t)
    return out


def dataset_frequency(record: dict, parsed: ParsedCsv) -> timebase.Frequency:
    """Frequency of the assigned time column (distinct sorted time points)."""
    roles = record.get("roles") or {}
    time_cols = [n for n, r in roles.items() if r == "time"]
    if not time_cols:
        raise NoTime("roles not assigned")
    kinds = _column_kinds(record)
    values = [t for t in time_values(parsed, time_cols[0], kinds[time_cols[0]])
              if t is not None]
    distinct = sorted(set(values))
    if len(distinct) != len(values):
        # Grouped datasets repeat timestamps across groups; dedupe first.
        pass
    return timebase.infer_frequency(distinct)


@dataclass
class PlotData:
    kind: str  # line | gantt
    x: list
    series: dict[str, list] = field(default_factory=dict)
    spans: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        out = {"kind": self.kind, "x": [_render(v) for v in self.x]}
        if self.kind == "line":
            out["series"] = self.series
        else:
            out["spans"] = [
                {**s, "start": _render(s["start"]), "end": _render(s["end"])}
                for s in self.spans
            ]
        return out


def _render(v):
    if isinstance(v, datetime):
        if v.hour == 0 and v.minute == 0 and v.second == 0 and v.microsecond == 0:
            return v.date().isoformat()
        return v.isoformat()
    return v


def plot_data(record: dict, parsed: ParsedCsv, x_col: str, y_cols: list[str]) -> PlotData:
    """Line plot for numeric y columns; Gantt spans for categorical ones.

    Gantt spans are maximal runs of constant value; each span ends where the
    next begins, and the final span extends one grid step past the last
    point so runs tile the full x range.
    """
    kinds = _column_kinds(record)
    for name in [x_col, *y_cols]:
        if name not in kinds:
            raise UnknownColumn(f"no column named {name!r}", field=name)
    y_kinds = {kinds[n] for n in y_cols}
    if "categorical" in y_kinds and y_kinds != {"categorical"}:
        raise MixedKinds("cannot mix categorical and numeric y columns")

    x_raw = parsed.column(x_col)
    if kinds[x_col] == "datetime":
        x = [timebase.parse_timestamp(v) for v in x_raw]
    elif kinds[x_col] == "numeric":
        x = [timebase.parse_number(v) for v in x_raw]
    else:
        x = list(x_raw)

    if y_kinds == {"categorical"}:
        spans = []
        for name in y_cols:
            values = parsed.column(name)
            spans.extend(_runs_to_spans(x, values, name))
        return PlotData(kind="gantt", x=x, spans=spans)

    series = {}
    for name in y_cols:
        series[name] = [timebase.parse_number(v) for v in parsed.column(name)]
    return PlotData(kind="line", x=x, series=series)


def _x_step(x: list):
    if len(x) >= 2:
        if isinstance(x[-1], datetime):
            return x[-1] - x[-2]
        if isinstance(x[-1], (int, float)):
            return x[-1] - x[-2]
    return 1


def _runs_to_spans(x: list, values: list[str], row_label: str) -> list[dict]:
    step = _x_step(x)
    extended = list(x)
    last = x[-1]
    extended.append(last + step if not isinstance(last, str) else last)
    spans = []
    start = 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] != values[start]:
            spans.append({
                "start": extended[start],
                "end": extended[i],
                "category": values[start],
                "row": row_label,
            })
            start = i
    return spans
