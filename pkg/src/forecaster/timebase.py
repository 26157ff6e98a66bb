"""Time grids: timestamp parsing, frequency inference, and calendar rendering.

Internally every series lives on an integer grid (offset 0, 1, 2, ...); a
TimeAxis maps offsets back to calendar timestamps or plain numbers at the
I/O boundary.  Monthly grids use month arithmetic instead of a fixed-second
step.
"""

from __future__ import annotations

import calendar
from dataclasses import dataclass
from datetime import datetime, timezone

from .errors import DuplicateTimestamps, TooShort

SECONDS = {"hour": 3600.0, "day": 86400.0, "week": 604800.0}
MONTH_BAND = (28 * SECONDS["day"], 31 * SECONDS["day"])

# Fraction of consecutive deltas that must equal the median step before the
# grid counts as regular.
REGULARITY_THRESHOLD = 0.8


def parse_timestamp(text: str) -> datetime | None:
    """Parse an ISO-8601 date or timestamp; None when it does not parse.

    Timezone-aware values are converted to UTC and made naive so all
    internal arithmetic is uniform.
    """
    s = text.strip()
    if not s:
        return None
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError:
        return None
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return dt


def parse_number(text: str) -> float | None:
    s = text.strip()
    if not s:
        return None
    try:
        return float(s)
    except ValueError:
        return None


def add_months(dt: datetime, n: int) -> datetime:
    month_index = dt.year * 12 + (dt.month - 1) + n
    year, month = divmod(month_index, 12)
    month += 1
    day = min(dt.day, calendar.monthrange(year, month)[1])
    return dt.replace(year=year, month=month, day=day)


def months_between(a: datetime, b: datetime) -> int:
    return (b.year - a.year) * 12 + (b.month - a.month)


@dataclass(frozen=True)
class Frequency:
    """Median step of a time index plus how regular the grid is.

    ``step`` is in seconds for datetime indices and in raw units for numeric
    indices.  ``label`` is one of hourly/daily/weekly/monthly/integer, or
    irregular when fewer than REGULARITY_THRESHOLD of the deltas equal the
    step.
    """

    step: float
    label: str
    regularity: float
    is_datetime: bool

    def to_json(self) -> dict:
        return {
            "step": self.step,
            "label": self.label,
            "regularity": self.regularity,
            "is_datetime": self.is_datetime,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Frequency":
        return cls(float(obj["step"]), obj["label"], float(obj["regularity"]),
                   bool(obj["is_datetime"]))


def _deltas_equal(delta: float, step: float, monthly: bool) -> bool:
    if monthly:
        return MONTH_BAND[0] <= delta <= MONTH_BAND[1]
    return abs(delta - step) <= 1e-9 * max(abs(step), 1.0)


def infer_frequency(timestamps) -> Frequency:
    """Median-delta frequency of a sorted, duplicate-free time index.

    ``timestamps`` holds datetimes or numbers.  Monthly grids treat any
    28-31 day delta as one month when counting regularity.
    """
    ts = list(timestamps)
    if len(ts) < 2:
        raise TooShort("need at least 2 time points")
    is_dt = isinstance(ts[0], datetime)
    if is_dt:
        values = [t.timestamp() for t in ts]
    else:
        values = [float(t) for t in ts]
    deltas = [b - a for a, b in zip(values, values[1:])]
    if any(d == 0 for d in deltas):
        raise DuplicateTimestamps("time index contains duplicates")

    ordered = sorted(deltas)
    n = len(ordered)
    step = ordered[n // 2] if n % 2 else 0.5 * (ordered[n // 2 - 1] + ordered[n // 2])

    if is_dt:
        monthly = MONTH_BAND[0] <= step <= MONTH_BAND[1]
        if abs(step - SECONDS["hour"]) < 1e-6:
            label = "hourly"
        elif abs(step - SECONDS["day"]) < 1e-6:
            label = "daily"
        elif abs(step - SECONDS["week"]) < 1e-6:
            label = "weekly"
        elif monthly:
            label = "monthly"
        else:
            # Regular but unnamed step: treated as a unitless grid.
            label = "integer"
    else:
        monthly = False
        label = "integer"

    matches = sum(1 for d in deltas if _deltas_equal(d, step, monthly))
    regularity = matches / len(deltas)
    if regularity < REGULARITY_THRESHOLD:
        label = "irregular"
    return Frequency(step=step, label=label, regularity=regularity, is_datetime=is_dt)


@dataclass(frozen=True)
class TimeAxis:
    """Maps integer grid offsets to calendar timestamps or numbers."""

    kind: str  # "datetime" | "monthly" | "numeric"
    origin: float  # epoch seconds (datetime/monthly) or numeric origin
    step: float  # seconds (datetime), months (monthly), units (numeric)

    @classmethod
    def build(cls, first, freq: Frequency) -> "TimeAxis":
        if freq.is_datetime:
            origin = first.timestamp()
            if freq.label == "monthly":
                return cls("monthly", origin, 1.0)
            return cls("datetime", origin, freq.step)
        return cls("numeric", float(first), freq.step)

    def _origin_dt(self) -> datetime:
        return datetime.fromtimestamp(self.origin, tz=timezone.utc).replace(tzinfo=None)

    def value(self, offset: int):
        if self.kind == "numeric":
            return self.origin + offset * self.step
        if self.kind == "monthly":
            return add_months(self._origin_dt(), int(offset * self.step))
        return datetime.fromtimestamp(self.origin + offset * self.step,
                                      tz=timezone.utc).replace(tzinfo=None)

    def render(self, offset: int):
        """JSON-friendly rendering of one grid offset."""
        v = self.value(offset)
        if isinstance(v, datetime):
            if v.hour == 0 and v.minute == 0 and v.second == 0 and v.microsecond == 0:
                return v.date().isoformat()
            return v.isoformat()
        return v

    def render_range(self, start: int, stop: int) -> list:
        return [self.render(i) for i in range(start, stop)]

    def offset_of(self, t) -> float:
        """Fractional grid position of a timestamp; integral when on-grid."""
        if self.kind == "numeric":
            return (float(t) - self.origin) / self.step
        if self.kind == "monthly":
            return months_between(self._origin_dt(), t) / self.step
        return (t.timestamp() - self.origin) / self.step

    def to_json(self) -> dict:
        return {"kind": self.kind, "origin": self.origin, "step": self.step}

    @classmethod
    def from_json(cls, obj: dict) -> "TimeAxis":
        return cls(obj["kind"], float(obj["origin"]), float(obj["step"]))
