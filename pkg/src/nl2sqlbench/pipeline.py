"""Dual-track inference orchestration.

Model-based track: greedy (temperature 0, one candidate) or sampled pools
evaluated by majority voting. Agentic track: retrieval-grounded context,
a candidate pool, per-candidate execution-feedback repair, and
consistency-based selection over execution-result clusters. Stages toggle
independently so ablation configurations can be measured side by side.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

from .corpus import BenchmarkItem, DatabaseHandle
from .context import SchemaContext, build_prompt
from .errors import ConfigError
from .executor import (
    STATUS_EMPTY,
    ExecutionOutcome,
    compare_results,
    execute_sql,
    is_order_sensitive,
    result_signature,
)
from .gateway import Candidate, GenerationRequest, generate

logger = logging.getLogger(__name__)

REPAIR_TEMPLATE = (
    "Your previous SQL query was:\n```sql\n{sql}\n```\n"
    "Executing it produced the error: {error}. Fix the query. "
    "Output only the corrected SQL inside ```sql ``` tags."
)


@dataclass
class PipelineConfig:
    use_retriever: bool = True
    use_verifier: bool = True
    use_selector: bool = True
    num_candidates: int = 8
    verifier_max_iters: int = 2
    timeout_seconds: float = 30.0
    temperature: float = 0.8
    max_new_tokens: int = 2048
    backend_params: dict = field(default_factory=dict)
    seed: int | None = None
    values_per_column: int = 3
    retrieval_top_k: int = 3

    def __post_init__(self):
        if self.num_candidates < 1:
            raise ConfigError("num_candidates must be at least 1")
        if self.verifier_max_iters < 0:
            raise ConfigError("verifier_max_iters must be non-negative")
        if not self.use_selector and self.num_candidates > 1:
            raise ConfigError("a candidate pool (k > 1) needs the selector enabled")


@dataclass
class PoolEntry:
    """One executed pool candidate, ready for consistency clustering."""

    trajectory_id: int
    sql: str | None
    signature: str  # hex digest of the execution-result signature
    failure: bool
    correct: bool = False
    status: str = STATUS_EMPTY


@dataclass
class EvalRecord:
    item_id: str
    db_id: str
    difficulty: str
    question: str
    gold_sql: str
    final_sql: str | None
    candidates: list[Candidate]
    outcome: ExecutionOutcome
    gold_outcome: ExecutionOutcome
    correct: bool
    order_sensitive: bool
    per_stage_trace: list[tuple[str, str]]
    total_latency_seconds: float
    total_tokens: int
    pool: list[PoolEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        """Serializable form for the records file.

        Result rows and measured SQL wall times are dropped: latency fields
        account for backend calls only, keeping mock-backend runs
        byte-reproducible.
        """
        return {
            "item_id": self.item_id,
            "db_id": self.db_id,
            "difficulty": self.difficulty,
            "question": self.question,
            "gold_sql": self.gold_sql,
            "final_sql": self.final_sql,
            "correct": self.correct,
            "order_sensitive": self.order_sensitive,
            "outcome": _outcome_dict(self.outcome),
            "gold_outcome": _outcome_dict(self.gold_outcome),
            "candidates": [
                {
                    "trajectory_id": c.trajectory_id,
                    "raw_text": c.raw_text,
                    "extracted_sql": c.extracted_sql,
                    "latency_seconds": c.latency_seconds,
                    "token_count": c.token_count,
                    "tokens_approximate": c.tokens_approximate,
                    "error": c.error,
                }
                for c in self.candidates
            ],
            "pool": [
                {
                    "trajectory_id": e.trajectory_id,
                    "sql": e.sql,
                    "signature": e.signature,
                    "failure": e.failure,
                    "correct": e.correct,
                    "status": e.status,
                }
                for e in self.pool
            ],
            "per_stage_trace": [list(entry) for entry in self.per_stage_trace],
            "total_latency_seconds": self.total_latency_seconds,
            "total_tokens": self.total_tokens,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalRecord":
        return cls(
            item_id=data["item_id"],
            db_id=data["db_id"],
            difficulty=data["difficulty"],
            question=data["question"],
            gold_sql=data["gold_sql"],
            final_sql=data["final_sql"],
            candidates=[
                Candidate(
                    trajectory_id=c["trajectory_id"],
                    raw_text=c["raw_text"],
                    extracted_sql=c["extracted_sql"],
                    latency_seconds=c["latency_seconds"],
                    token_count=c["token_count"],
                    tokens_approximate=c.get("tokens_approximate", False),
                    error=c.get("error"),
                )
                for c in data["candidates"]
            ],
            outcome=_outcome_from_dict(data["outcome"]),
            gold_outcome=_outcome_from_dict(data["gold_outcome"]),
            correct=data["correct"],
            order_sensitive=data["order_sensitive"],
            per_stage_trace=[tuple(entry) for entry in data["per_stage_trace"]],
            total_latency_seconds=data["total_latency_seconds"],
            total_tokens=data["total_tokens"],
            pool=[
                PoolEntry(
                    trajectory_id=e["trajectory_id"],
                    sql=e["sql"],
                    signature=e["signature"],
                    failure=e["failure"],
                    correct=e["correct"],
                    status=e.get("status", STATUS_EMPTY),
                )
                for e in data.get("pool", [])
            ],
        )


def _outcome_dict(outcome: ExecutionOutcome) -> dict:
    return {
        "status": outcome.status,
        "column_count": outcome.column_count,
        "row_count": outcome.row_count,
        "error_message": outcome.error_message,
    }


def _outcome_from_dict(data: dict) -> ExecutionOutcome:
    return ExecutionOutcome(
        status=data["status"],
        rows=None,
        column_count=data["column_count"],
        error_message=data["error_message"],
        elapsed_seconds=0.0,
        row_count=data.get("row_count"),
    )


def _prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode()).hexdigest()[:12]


def _request(prompt: str, cfg: PipelineConfig, temperature: float, num_candidates: int) -> GenerationRequest:
    return GenerationRequest(
        prompt=prompt,
        temperature=temperature,
        max_new_tokens=cfg.max_new_tokens,
        num_candidates=num_candidates,
        backend_params=dict(cfg.backend_params),
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# Stages


def run_generator(
    item: BenchmarkItem,
    ctx: SchemaContext,
    cfg: PipelineConfig,
    backend,
    trace: list | None = None,
) -> list[Candidate]:
    """Populate a candidate pool of exactly cfg.num_candidates trajectories."""
    prompt = build_prompt(item, ctx)
    if trace is not None:
        trace.append(("generate", f"prompt {_prompt_hash(prompt)} x{cfg.num_candidates}"))
    candidates = generate(_request(prompt, cfg, cfg.temperature, cfg.num_candidates), backend)
    if trace is not None:
        for cand in candidates:
            note = "failed" if cand.failed else f"{cand.token_count} tokens"
            trace.append(("generate", f"trajectory {cand.trajectory_id}: {note}"))
    return candidates


def run_verifier(
    candidate: Candidate,
    item: BenchmarkItem,
    ctx: SchemaContext,
    cfg: PipelineConfig,
    backend,
    db: DatabaseHandle,
    trace: list | None = None,
) -> Candidate:
    """Execution-feedback repair loop (at most cfg.verifier_max_iters regenerations).

    Repairs regenerate at temperature 0; latency and token counts accumulate
    onto the returned candidate. A candidate that still fails after the
    budget is returned unchanged for selection to down-rank.
    """
    current = candidate
    base_prompt = build_prompt(item, ctx)
    for iteration in range(cfg.verifier_max_iters):
        outcome = execute_sql(db, current.extracted_sql, cfg.timeout_seconds)
        if outcome.ok:
            if trace is not None and iteration == 0:
                trace.append(("verify", f"trajectory {current.trajectory_id}: ok, no repair"))
            return current
        error_text = outcome.error_message or outcome.status
        if trace is not None:
            trace.append(
                ("verify", f"trajectory {current.trajectory_id} iter {iteration + 1}: {outcome.status}: {error_text}")
            )
        repair_prompt = base_prompt + "\n" + REPAIR_TEMPLATE.format(
            sql=current.extracted_sql or "", error=error_text
        )
        repaired = generate(_request(repair_prompt, cfg, 0.0, 1), backend)[0]
        current = Candidate(
            trajectory_id=current.trajectory_id,
            raw_text=repaired.raw_text,
            extracted_sql=repaired.extracted_sql,
            latency_seconds=current.latency_seconds + repaired.latency_seconds,
            token_count=current.token_count + repaired.token_count,
            tokens_approximate=current.tokens_approximate or repaired.tokens_approximate,
            error=repaired.error,
        )
    return current


def evaluate_pool(
    candidates: list[Candidate],
    db: DatabaseHandle,
    cfg: PipelineConfig,
    gold_outcome: ExecutionOutcome | None = None,
    order_sensitive: bool = False,
) -> list[PoolEntry]:
    """Execute every candidate and cluster-ready it.

    Clustering signatures use order-insensitive canonical forms; per-entry
    correctness (when gold is available) uses the gold query's own order
    sensitivity.
    """
    entries = []
    for cand in candidates:
        outcome = execute_sql(db, cand.extracted_sql, cfg.timeout_seconds)
        signature = result_signature(outcome, order_sensitive=False)
        correct = False
        if gold_outcome is not None and gold_outcome.ok:
            correct = compare_results(outcome, gold_outcome, order_sensitive)
        entries.append(
            PoolEntry(
                trajectory_id=cand.trajectory_id,
                sql=cand.extracted_sql,
                signature=signature.hex,
                failure=not outcome.ok,
                correct=correct,
                status=outcome.status,
            )
        )
    return entries


def select_winner(entries: list[PoolEntry]) -> PoolEntry | None:
    """Plurality choice over execution-result clusters.

    Failure clusters are discarded unless every cluster is a failure. The
    largest surviving cluster wins; ties go to the cluster containing the
    lowest trajectory id, whose candidate also serves as the representative.
    Entries without SQL cannot represent anything and are ignored.
    """
    eligible = [e for e in entries if e.sql is not None]
    if not eligible:
        return None
    clusters: dict[str, list[PoolEntry]] = {}
    for entry in eligible:
        clusters.setdefault(entry.signature, []).append(entry)
    groups = list(clusters.values())
    survivors = [g for g in groups if not g[0].failure]
    if not survivors:
        survivors = groups
    survivors.sort(key=lambda g: (-len(g), min(e.trajectory_id for e in g)))
    winner = survivors[0]
    return min(winner, key=lambda e: e.trajectory_id)


def run_selector(
    candidates: list[Candidate],
    item: BenchmarkItem,
    db: DatabaseHandle,
    cfg: PipelineConfig,
) -> str | None:
    """Consistency-based selection: return the winning cluster's representative SQL."""
    if not candidates:
        raise ValueError("selector needs a non-empty candidate pool")
    winner = select_winner(evaluate_pool(candidates, db, cfg))
    return winner.sql if winner else None


# ---------------------------------------------------------------------------
# Tracks


def _finish_record(
    item: BenchmarkItem,
    final_sql: str | None,
    candidates: list[Candidate],
    pool: list[PoolEntry],
    gold_outcome: ExecutionOutcome,
    order_sensitive: bool,
    cfg: PipelineConfig,
    db: DatabaseHandle,
    trace: list,
) -> EvalRecord:
    outcome = execute_sql(db, final_sql, cfg.timeout_seconds)
    trace.append(("execute", f"final status {outcome.status}"))
    if gold_outcome.ok:
        correct = compare_results(outcome, gold_outcome, order_sensitive)
    else:
        correct = False
        trace.append(("execute", f"gold invalid: {gold_outcome.status}"))
    trace.append(("compare", f"correct={correct}"))
    return EvalRecord(
        item_id=item.item_id,
        db_id=item.db_id,
        difficulty=item.difficulty,
        question=item.question,
        gold_sql=item.gold_sql,
        final_sql=final_sql,
        candidates=candidates,
        outcome=outcome,
        gold_outcome=gold_outcome,
        correct=correct,
        order_sensitive=order_sensitive,
        per_stage_trace=trace,
        total_latency_seconds=sum(c.latency_seconds for c in candidates),
        total_tokens=sum(c.token_count for c in candidates),
        pool=pool,
    )


def run_greedy(
    item: BenchmarkItem,
    ctx: SchemaContext,
    cfg: PipelineConfig,
    backend,
    db: DatabaseHandle,
) -> EvalRecord:
    """Single deterministic generation at temperature 0, executed and compared."""
    trace: list = []
    prompt = build_prompt(item, ctx)
    trace.append(("generate", f"prompt {_prompt_hash(prompt)} greedy"))
    candidate = generate(_request(prompt, cfg, 0.0, 1), backend)[0]
    if candidate.error:
        trace.append(("generate", f"backend failure: {candidate.error}"))
    order_sensitive = is_order_sensitive(item.gold_sql)
    gold_outcome = execute_sql(db, item.gold_sql, cfg.timeout_seconds)
    pool = evaluate_pool([candidate], db, cfg, gold_outcome, order_sensitive)
    return _finish_record(
        item, candidate.extracted_sql, [candidate], pool, gold_outcome, order_sensitive, cfg, db, trace
    )


def run_sql_d1(
    item: BenchmarkItem,
    ctx_builder,
    cfg: PipelineConfig,
    backend,
    db: DatabaseHandle,
) -> EvalRecord:
    """The four-stage agentic flow with stages toggled by the config.

    ``ctx_builder(use_retriever)`` must return the item's SchemaContext with
    DDL rendered (value retrieval applied only when asked). With everything
    switched off and one candidate this degenerates to the greedy track.
    """
    trace: list = []
    ctx = ctx_builder(cfg.use_retriever)
    if cfg.use_retriever:
        n_matches = sum(len(v) for v in ctx.matched_values.values())
        trace.append(("retrieve", f"{n_matches} matched values over {len(ctx.matched_values)} columns"))
    else:
        trace.append(("retrieve", "disabled: schema DDL only"))

    candidates = run_generator(item, ctx, cfg, backend, trace)

    if cfg.use_verifier:
        candidates = [run_verifier(c, item, ctx, cfg, backend, db, trace) for c in candidates]

    order_sensitive = is_order_sensitive(item.gold_sql)
    gold_outcome = execute_sql(db, item.gold_sql, cfg.timeout_seconds)
    pool = evaluate_pool(candidates, db, cfg, gold_outcome, order_sensitive)

    if cfg.use_selector:
        winner = select_winner(pool)
        final_sql = winner.sql if winner else None
        if winner:
            cluster_size = sum(1 for e in pool if e.signature == winner.signature and e.sql is not None)
            trace.append(
                ("select", f"trajectory {winner.trajectory_id} wins (cluster {cluster_size}/{len(pool)})")
            )
        else:
            trace.append(("select", "no candidate produced SQL"))
    else:
        final_sql = candidates[0].extracted_sql
        trace.append(("select", "disabled: single candidate"))

    return _finish_record(item, final_sql, candidates, pool, gold_outcome, order_sensitive, cfg, db, trace)
