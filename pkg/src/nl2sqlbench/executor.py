"""Sandboxed SQL execution and execution-accuracy result comparison.

Queries run on fresh read-only connections with a wall-clock limit enforced
through SQLite's progress handler. Results are compared positionally, as row
sequences when the gold query orders its output and as row multisets
otherwise; numeric cells use a relative tolerance. Canonical digests of
results ("signatures") drive consistency clustering in the selector.
"""

from __future__ import annotations

import hashlib
import re
import sqlite3
import time
from dataclasses import dataclass

from .corpus import DatabaseHandle

STATUS_OK = "ok"
STATUS_SQL_ERROR = "sql_error"
STATUS_TIMEOUT = "timeout"
STATUS_EMPTY = "empty_prediction"

# |x - y| <= REL_TOL * max(1, |x|, |y|) for real-valued cells
REL_TOL = 1e-6
# predictions returning more rows than this are treated as failed
ROW_CAP = 100_000
# VM instructions between progress-handler ticks
_PROGRESS_STEP = 1000

DEFAULT_TIMEOUT_SECONDS = 30.0


@dataclass
class ExecutionOutcome:
    status: str
    rows: list[tuple] | None
    column_count: int
    error_message: str | None
    elapsed_seconds: float
    row_count: int | None = None  # survives serialization after rows are dropped

    def __post_init__(self):
        if self.rows is not None:
            self.row_count = len(self.rows)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass(frozen=True)
class ResultSignature:
    """Fixed-length digest of a canonicalized execution result."""

    digest: bytes

    @property
    def hex(self) -> str:
        return self.digest.hex()


def execute_sql(db: DatabaseHandle, sql: str | None, timeout_seconds: float = DEFAULT_TIMEOUT_SECONDS) -> ExecutionOutcome:
    """Run one statement read-only with a hard wall-clock limit.

    Blob cells are replaced by a content digest so outcomes stay hashable and
    small. Write statements are rejected by the read-only connection and
    surface as sql_error.
    """
    if sql is None or not sql.strip():
        return ExecutionOutcome(STATUS_EMPTY, None, 0, "empty prediction", 0.0)
    start = time.monotonic()
    try:
        conn = db.connect()
    except sqlite3.Error as exc:
        return ExecutionOutcome(STATUS_SQL_ERROR, None, 0, str(exc), time.monotonic() - start)
    timed_out = False

    def _tick():
        nonlocal timed_out
        if time.monotonic() - start > timeout_seconds:
            timed_out = True
            return 1
        return 0

    conn.set_progress_handler(_tick, _PROGRESS_STEP)
    try:
        cursor = conn.execute(sql)
        rows: list[tuple] = []
        capped = False
        while True:
            chunk = cursor.fetchmany(1024)
            if not chunk:
                break
            if not capped:
                rows.extend(chunk)
                if len(rows) > ROW_CAP:
                    # keep draining (discarding) so a finite oversized result is
                    # distinguishable from a runaway query hitting the deadline
                    capped = True
                    rows.clear()
        if capped:
            return ExecutionOutcome(
                STATUS_SQL_ERROR, None, 0,
                f"result too large (more than {ROW_CAP} rows)",
                time.monotonic() - start,
            )
        column_count = len(cursor.description) if cursor.description else 0
        rows = [tuple(_sanitize_cell(c) for c in row) for row in rows]
        return ExecutionOutcome(STATUS_OK, rows, column_count, None, time.monotonic() - start)
    except (sqlite3.Error, sqlite3.Warning, OverflowError, ValueError) as exc:
        elapsed = time.monotonic() - start
        if timed_out:
            return ExecutionOutcome(STATUS_TIMEOUT, None, 0, f"timed out after {timeout_seconds}s", elapsed)
        return ExecutionOutcome(STATUS_SQL_ERROR, None, 0, str(exc), elapsed)
    finally:
        conn.close()


def _sanitize_cell(cell):
    if isinstance(cell, (bytes, memoryview)):
        return hashlib.sha256(bytes(cell)).digest()[:16]
    return cell


def is_order_sensitive(gold_sql: str) -> bool:
    """True iff the outermost query carries an ORDER BY clause.

    Parses via the diagnoser when possible; falls back to a textual scan for
    ORDER BY at parenthesis depth zero, which never fails.
    """
    from .diagnoser import parse_sql  # deferred: the parser is only needed on this path

    try:
        ast = parse_sql(gold_sql)
        return bool(ast.order_by)
    except Exception:
        return _order_by_textual(gold_sql)


def _order_by_textual(sql: str) -> bool:
    stripped = re.sub(r"'(?:[^']|'')*'", "''", sql)  # blank out string literals
    stripped = re.sub(r"--[^\n]*", "", stripped)
    stripped = re.sub(r"/\*.*?\*/", "", stripped, flags=re.S)
    depth = 0
    for match in re.finditer(r"[()]|\bORDER\s+BY\b", stripped, flags=re.I):
        tok = match.group(0)
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth -= 1
        elif depth == 0:
            return True
    return False


def _is_number(cell) -> bool:
    return isinstance(cell, (int, float)) and not isinstance(cell, bool)


def cells_equal(a, b) -> bool:
    """Cell equality: ints exact, reals tolerant, text after trailing-space strip."""
    if a is None or b is None:
        return a is None and b is None
    if _is_number(a) and _is_number(b):
        if isinstance(a, int) and isinstance(b, int):
            return a == b
        return abs(a - b) <= REL_TOL * max(1.0, abs(a), abs(b))
    if isinstance(a, str) and isinstance(b, str):
        return a.rstrip() == b.rstrip()
    if isinstance(a, bytes) and isinstance(b, bytes):
        return a == b
    return False


def _canonical_cell(cell):
    # type tag first so mixed-type columns sort deterministically
    if cell is None:
        return (0, "")
    if _is_number(cell):
        return (1, round(cell / REL_TOL))
    if isinstance(cell, str):
        return (2, cell.rstrip())
    return (3, cell.hex())


def _row_key(row):
    return tuple(_canonical_cell(c) for c in row)


def _rows_equal(a, b) -> bool:
    return len(a) == len(b) and all(cells_equal(x, y) for x, y in zip(a, b))


def compare_results(pred: ExecutionOutcome, gold: ExecutionOutcome, order_sensitive: bool) -> bool:
    """Execution-accuracy comparison of a predicted result against the gold result.

    Positional: column order matters, column names do not. Row order matters
    only when order_sensitive. Requires equal column counts.
    """
    if gold.status != STATUS_OK:
        raise ValueError("gold outcome must have executed successfully")
    if pred.status != STATUS_OK:
        return False
    if pred.column_count != gold.column_count:
        return False
    assert pred.rows is not None and gold.rows is not None
    if len(pred.rows) != len(gold.rows):
        return False
    pred_rows, gold_rows = pred.rows, gold.rows
    if not order_sensitive:
        pred_rows = sorted(pred_rows, key=_row_key)
        gold_rows = sorted(gold_rows, key=_row_key)
    return all(_rows_equal(p, g) for p, g in zip(pred_rows, gold_rows))


def result_signature(outcome: ExecutionOutcome, order_sensitive: bool) -> ResultSignature:
    """Digest of the canonical result form; distinct per failure status.

    Numeric cells are rounded onto the tolerance grid before hashing, so equal
    signatures imply compare_results agreement (up to hash collision).
    """
    hasher = hashlib.sha256()
    if outcome.status != STATUS_OK:
        hasher.update(b"status:" + outcome.status.encode())
    else:
        assert outcome.rows is not None
        hasher.update(f"ok:{outcome.column_count}:".encode())
        keys = [_row_key(r) for r in outcome.rows]
        if not order_sensitive:
            keys.sort()
        hasher.update(repr(keys).encode())
    return ResultSignature(hasher.digest())


def database_digest(db: DatabaseHandle) -> str:
    """Content hash of the database file, for mutation checks."""
    return hashlib.sha256(db.path.read_bytes()).hexdigest()
