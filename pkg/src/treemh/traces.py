"""Per-iteration trace records and their CSV form."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

FIXED_COLUMNS = ("iter", "k", "log_joint", "log_target", "x_summary")
RJ_COLUMNS = FIXED_COLUMNS + ("dim",)
VERIFY_COLUMN = "max_abs_A_minus_1"


class TraceFormatError(ValueError):
    pass


def format_value(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    scalars: dict[str, Any]
    model_id: str = ""


@dataclass
class Trace:
    records: list[TraceRecord] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: TraceRecord) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise TraceFormatError("trace iterations must be strictly increasing")
        self.records.append(record)

    def column(self, name: str) -> list[Any]:
        if name == "iter":
            return [r.iteration for r in self.records]
        if name == "x_summary":
            return [r.model_id for r in self.records]
        return [r.scalars[name] for r in self.records]

    @property
    def iterations(self) -> list[int]:
        return [r.iteration for r in self.records]

    @property
    def model_ids(self) -> list[str]:
        return [r.model_id for r in self.records]


def record_row(record: TraceRecord, columns: Sequence[str]) -> list[str]:
    row = []
    for c in columns:
        if c == "iter":
            row.append(str(record.iteration))
        elif c == "x_summary":
            row.append(record.model_id)
        else:
            row.append(format_value(record.scalars[c]))
    return row


class TraceWriter:
    """Append-only CSV writer that flushes every ``flush_every`` rows."""

    def __init__(self, path: str | Path, columns: Sequence[str], flush_every: int = 100):
        self.path = Path(path)
        self.columns = tuple(columns)
        self.flush_every = flush_every
        self._pending: list[list[str]] = []
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow(self.columns)

    def write(self, record: TraceRecord) -> None:
        self._pending.append(record_row(record, self.columns))
        if len(self._pending) >= self.flush_every:
            self.flush()

    def flush(self) -> None:
        if not self._pending:
            return
        with self.path.open("a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(self._pending)
        self._pending.clear()

    def close(self) -> None:
        self.flush()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _parse_scalar(text: str) -> Any:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def trace_to_csv(trace: Trace, columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in trace.records:
        w.writerow(record_row(r, columns))
    return buf.getvalue()


def read_trace_csv(path: str | Path) -> Trace:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration as exc:
            raise TraceFormatError(f"{path}: empty trace file") from exc
        if "iter" not in header:
            raise TraceFormatError(f"{path}: missing 'iter' column")
        trace = Trace(metadata={"path": str(path), "columns": header})
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise TraceFormatError(f"{path}:{lineno}: expected {len(header)} fields")
            values = dict(zip(header, row))
            it = int(values.pop("iter"))
            model_id = values.pop("x_summary", "")
            scalars = {k: _parse_scalar(v) for k, v in values.items()}
            trace.append(TraceRecord(it, scalars, model_id))
    return trace

