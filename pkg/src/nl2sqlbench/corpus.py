"""Benchmark ingestion: Spider/BIRD-style question files and their SQLite databases."""

from __future__ import annotations

import json
import logging
import sqlite3
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, IngestError, RegistryError

logger = logging.getLogger(__name__)

DIFFICULTIES = ("simple", "moderate", "challenging", "unlabeled")

_SPIDER_FIELDS = ("question", "db_id", "query")
_BIRD_FIELDS = ("question", "evidence", "db_id", "SQL", "difficulty")


@dataclass(frozen=True)
class BenchmarkItem:
    """One evaluation question: natural-language text plus its gold SQL."""

    item_id: str
    question: str
    db_id: str
    gold_sql: str
    evidence: str | None = None
    difficulty: str = "unlabeled"

    def __post_init__(self):
        if not self.gold_sql.strip():
            raise IngestError(f"item {self.item_id}: empty gold SQL")
        if self.difficulty not in DIFFICULTIES:
            raise IngestError(f"item {self.item_id}: bad difficulty {self.difficulty!r}")


@dataclass(frozen=True)
class DatabaseHandle:
    """A registered read-only SQLite database file."""

    db_id: str
    path: Path
    dialect: str = "sqlite"

    def connect(self) -> sqlite3.Connection:
        """Open a fresh read-only connection (one per in-flight execution)."""
        uri = f"file:{self.path}?mode=ro"
        conn = sqlite3.connect(uri, uri=True)
        conn.execute("PRAGMA query_only = ON")
        return conn


def _normalize_difficulty(raw, item_id: str) -> str:
    if raw is None:
        return "unlabeled"
    label = str(raw).strip().lower()
    if label in ("simple", "moderate", "challenging"):
        return label
    logger.warning("item %s: unknown difficulty %r, treating as unlabeled", item_id, raw)
    return "unlabeled"


def load_benchmark(path, format: str) -> list[BenchmarkItem]:
    """Load a benchmark file (JSON array of records) into BenchmarkItems.

    Spider records carry question/db_id/query; BIRD records additionally carry
    evidence and a difficulty label. Spider-family variants (DK/Syn/Realistic)
    are read with format="spider".
    """
    if format not in ("spider", "bird"):
        raise ConfigError(f"unknown benchmark format {format!r}")
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise IngestError(f"{path}: expected an array of records")
    items: list[BenchmarkItem] = []
    seen: set[str] = set()
    for idx, record in enumerate(raw):
        if not isinstance(record, dict):
            raise IngestError(f"record {idx}: not an object")
        required = _BIRD_FIELDS if format == "bird" else _SPIDER_FIELDS
        for field in required:
            if field == "difficulty":
                continue  # optional even in BIRD dumps
            if field not in record:
                raise IngestError(f"record {idx}: missing field {field!r}")
        item_id = str(record.get("question_id", idx))
        if item_id in seen:
            raise IngestError(f"record {idx}: duplicate item_id {item_id!r}")
        seen.add(item_id)
        if format == "bird":
            item = BenchmarkItem(
                item_id=item_id,
                question=str(record["question"]),
                db_id=str(record["db_id"]),
                gold_sql=str(record["SQL"]),
                evidence=str(record["evidence"]),
                difficulty=_normalize_difficulty(record.get("difficulty"), item_id),
            )
        else:
            item = BenchmarkItem(
                item_id=item_id,
                question=str(record["question"]),
                db_id=str(record["db_id"]),
                gold_sql=str(record["query"]),
            )
        items.append(item)
    return items


def dump_benchmark(items: list[BenchmarkItem], format: str) -> list[dict]:
    """Serialize items back to their source record shape (inverse of load_benchmark)."""
    if format not in ("spider", "bird"):
        raise ConfigError(f"unknown benchmark format {format!r}")
    records = []
    for item in items:
        if format == "bird":
            records.append(
                {
                    "question_id": item.item_id,
                    "question": item.question,
                    "evidence": item.evidence or "",
                    "db_id": item.db_id,
                    "SQL": item.gold_sql,
                    "difficulty": item.difficulty,
                }
            )
        else:
            records.append(
                {
                    "question_id": item.item_id,
                    "question": item.question,
                    "db_id": item.db_id,
                    "query": item.gold_sql,
                }
            )
    return records


def load_database(db_id: str, root, layout: str = "nested") -> DatabaseHandle:
    """Register root/<db_id>/<db_id>.sqlite (or root/<db_id>.sqlite with layout="flat")."""
    root = Path(root)
    if layout == "flat":
        path = root / f"{db_id}.sqlite"
    else:
        path = root / db_id / f"{db_id}.sqlite"
    if not path.is_file():
        raise RegistryError(f"database {db_id!r}: no file at {path}")
    handle = DatabaseHandle(db_id=db_id, path=path)
    try:
        conn = handle.connect()
        try:
            conn.execute("PRAGMA schema_version").fetchone()  # forces a header read
            row = conn.execute("SELECT 1").fetchone()
        finally:
            conn.close()
    except sqlite3.Error as exc:
        raise RegistryError(f"database {db_id!r}: cannot open {path}: {exc}") from exc
    if row != (1,):
        raise RegistryError(f"database {db_id!r}: probe query failed")
    return handle


def stratify(items) -> dict[str, list]:
    """Partition items into difficulty buckets (simple, moderate, challenging, unlabeled)."""
    buckets: dict[str, list] = {d: [] for d in DIFFICULTIES}
    for item in items:
        buckets[item.difficulty].append(item)
    return buckets
