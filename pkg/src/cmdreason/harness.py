"""End-to-end orchestration: dataset -> transcripts -> backend -> parse -> score.

A run owns an output directory and persists everything needed to audit or
re-score it offline:

* ``spec.json``     - the resolved experiment spec (re-runs reproduce results
                      given the mock backend or a warm cache)
* ``responses/``    - one raw response text file per command
* ``records.jsonl`` - per-command line records: id, cache_key, parse
                      method/failure, predicted mask, gold mask
* ``report.json``   - the scored accuracies, display-rounded

Dispatch is parallel up to max_in_flight, but records and reports are always
aggregated in dataset order, so parallelism never changes any output byte.
Nothing volatile (timestamps, latencies, cache-hit counts) is persisted.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .backend import (
    BackendConfig,
    ChatBackend,
    CompletionResult,
    HttpChatBackend,
    MockChatBackend,
    ResponseCache,
    cache_key,
)
from .dataset import (
    CATEGORY_TITLES,
    LabeledCommand,
    MalformedRecord,
    MissingFile,
    RequirementVector,
    load_dataset,
)
from .errors import BackendError, DataError, UsageError
from .metrics import (
    FAILURE_POLICIES,
    EvalReport,
    PredictionRecord,
    evaluate,
    format_percent,
)
from .parser import ParseOutcome, parse_response
from .prompt import (
    ANSWER_LINE_PREFIX,
    MODE_ORDER,
    ExplanationMode,
    PromptConfig,
    ShotExample,
    build_transcript,
)

log = logging.getLogger(__name__)

MOCK_GOLD_ENDPOINT = "mock://gold"
REPORT_FORMATS = ("table", "csv", "md")


class AbortedRun(BackendError):
    """A run stopped early on a backend failure; completed calls stay cached."""

    def __init__(self, n_completed: int, n_total: int, cause: BackendError) -> None:
        super().__init__(
            f"run aborted after {n_completed} of {n_total} commands: {cause}"
        )
        self.n_completed = n_completed
        self.n_total = n_total
        self.cause = cause


class UnwritableOutput(DataError):
    """An output file could not be written."""


@dataclass(frozen=True, slots=True)
class ExperimentSpec:
    """Everything that determines a run's outputs; fully serializable."""

    dataset_path: str
    prompt_config: PromptConfig
    backend_config: BackendConfig
    output_dir: str
    failure_policy: str = "strict"
    seed: int = 0  # provenance only; runs themselves draw no randomness

    def __post_init__(self) -> None:
        if self.failure_policy not in FAILURE_POLICIES:
            raise ValueError(f"failure_policy must be one of {FAILURE_POLICIES}")

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "dataset_path": self.dataset_path,
            "output_dir": self.output_dir,
            "failure_policy": self.failure_policy,
            "seed": self.seed,
            "prompt_config": self.prompt_config.to_json_dict(),
            "backend_config": dataclasses.asdict(self.backend_config),
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "ExperimentSpec":
        return cls(
            dataset_path=data["dataset_path"],
            prompt_config=PromptConfig.from_json_dict(data["prompt_config"]),
            backend_config=BackendConfig(**data["backend_config"]),
            output_dir=data["output_dir"],
            failure_policy=data["failure_policy"],
            seed=data["seed"],
        )


@dataclass(frozen=True, slots=True)
class CommandRecord:
    """One line of records.jsonl: enough to re-score without re-querying."""

    command_id: str
    cache_key: str
    method: str | None  # parse method, "direct" for baselines, None on failure
    failure_reason: str | None
    predicted: str | None  # 8-char mask, None on failure
    gold: str  # 8-char mask

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "id": self.command_id,
            "cache_key": self.cache_key,
            "method": self.method,
            "failure_reason": self.failure_reason,
            "predicted": self.predicted,
            "gold": self.gold,
        }

    @classmethod
    def from_json_dict(cls, data: dict[str, Any]) -> "CommandRecord":
        return cls(
            command_id=data["id"],
            cache_key=data["cache_key"],
            method=data["method"],
            failure_reason=data["failure_reason"],
            predicted=data["predicted"],
            gold=data["gold"],
        )


@dataclass(frozen=True, slots=True)
class RunResult:
    report: EvalReport
    records: list[CommandRecord]
    output_dir: Path
    n_cache_hits: int
    n_backend_attempts: int


# =============================================================================
# File helpers
# =============================================================================


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise UnwritableOutput(f"cannot write {path}: {exc}") from exc


def _write_json(path: Path, data: Any) -> None:
    _write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_jsonl(path: Path, rows: list[dict[str, Any]]) -> None:
    _write_text(path, "".join(json.dumps(row, sort_keys=True) + "\n" for row in rows))


def _safe_filename(command_id: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", command_id)
    if safe != command_id:  # disambiguate ids that collide after sanitizing
        safe += "-" + hashlib.sha256(command_id.encode("utf-8")).hexdigest()[:8]
    return safe


# =============================================================================
# Backends for runs
# =============================================================================


def gold_echo_script(records: list[LabeledCommand]) -> dict[str, str]:
    """Mock script answering every dataset command with its gold answer line."""
    return {
        rec.text: f"{ANSWER_LINE_PREFIX} {rec.gold.bracket()}" for rec in records
    }


def build_backend(
    config: BackendConfig,
    dataset: list[LabeledCommand] | None = None,
    cache: ResponseCache | None = None,
) -> ChatBackend:
    """Construct the backend an endpoint URL names.

    ``mock://gold`` answers from the dataset's own gold labels (an offline
    oracle for demos and smoke tests); any http(s) URL gets the real client.
    """
    if cache is None:
        cache = ResponseCache()
    if config.endpoint_url == MOCK_GOLD_ENDPOINT:
        if dataset is None:
            raise UsageError(f"{MOCK_GOLD_ENDPOINT} needs a dataset to echo from")
        return MockChatBackend(gold_echo_script(dataset), config=config, cache=cache)
    if config.endpoint_url.startswith("mock://"):
        raise UsageError(
            f"unknown mock endpoint {config.endpoint_url!r}; only {MOCK_GOLD_ENDPOINT} is built in"
        )
    return HttpChatBackend(config, cache)


# =============================================================================
# Single experiment
# =============================================================================


def run_experiment(spec: ExperimentSpec, backend: ChatBackend | None = None) -> RunResult:
    """Run one configuration over a dataset and persist all artifacts.

    On a backend failure the run aborts: completed responses are already
    cached and written, a ``records.partial.jsonl`` snapshot is saved, and
    AbortedRun is raised.  Re-running the same spec resumes from the cache.
    """
    data = load_dataset(spec.dataset_path)
    out_dir = Path(spec.output_dir)
    _write_json(out_dir / "spec.json", spec.to_json_dict())
    if backend is None:
        backend = build_backend(spec.backend_config, dataset=data)

    transcripts = [build_transcript(spec.prompt_config, rec.text) for rec in data]
    keys = [cache_key(backend.config, t) for t in transcripts]
    responses_dir = out_dir / "responses"
    results: list[CompletionResult | None] = [None] * len(data)

    failure: BackendError | None = None
    with ThreadPoolExecutor(max_workers=backend.config.max_in_flight) as pool:
        futures = {
            pool.submit(backend.complete, t): i for i, t in enumerate(transcripts)
        }
        for future in as_completed(futures):
            i = futures[future]
            try:
                result = future.result()
            except BackendError as exc:
                failure = exc
                pool.shutdown(wait=True, cancel_futures=True)
                break
            results[i] = result
            _write_text(
                responses_dir / f"{_safe_filename(data[i].command_id)}.txt",
                result.raw_text,
            )

    if failure is not None:
        partial = [
            _make_record(rec, res.raw_text, key)
            for rec, res, key in zip(data, results, keys)
            if res is not None
        ]
        _write_jsonl(out_dir / "records.partial.jsonl", [r.to_json_dict() for r in partial])
        raise AbortedRun(len(partial), len(data), failure) from failure

    records = [
        _make_record(rec, res.raw_text, key)
        for rec, res, key in zip(data, results, keys)
    ]
    predictions = [
        PredictionRecord(rec.command_id, _outcome_of(record), res.raw_text)
        for rec, res, record in zip(data, results, records)
    ]
    report = evaluate(predictions, data, spec.failure_policy)
    _write_jsonl(out_dir / "records.jsonl", [r.to_json_dict() for r in records])
    # a finished run supersedes any partial snapshot left by an aborted one
    (out_dir / "records.partial.jsonl").unlink(missing_ok=True)
    _write_json(
        out_dir / "report.json",
        report_json_dict(spec.backend_config.model_name, report),
    )
    return RunResult(
        report=report,
        records=records,
        output_dir=out_dir,
        n_cache_hits=sum(1 for r in results if r and r.cache_hit),
        n_backend_attempts=sum(r.attempt_count for r in results if r),
    )


def _make_record(rec: LabeledCommand, raw_text: str, key: str) -> CommandRecord:
    outcome = parse_response(raw_text)
    return CommandRecord(
        command_id=rec.command_id,
        cache_key=key,
        method=outcome.method,
        failure_reason=outcome.failure_reason,
        predicted=outcome.vector.bits() if outcome.vector is not None else None,
        gold=rec.gold.bits(),
    )


def _outcome_of(record: CommandRecord) -> ParseOutcome:
    if record.predicted is not None:
        return ParseOutcome.success(
            RequirementVector.from_bits(record.predicted), record.method
        )
    return ParseOutcome.failure(record.failure_reason)


# =============================================================================
# Records round-trip (offline re-scoring)
# =============================================================================


def load_records(path: str | Path) -> list[CommandRecord]:
    """Read a records.jsonl file back; raises MalformedRecord on bad lines."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    records: list[CommandRecord] = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                record = CommandRecord.from_json_dict(data)
            except (ValueError, KeyError) as exc:
                raise MalformedRecord(path, line_no, f"bad record line: {exc}") from exc
            if record.predicted is None and record.failure_reason is None:
                raise MalformedRecord(
                    path, line_no, "record has neither predicted mask nor failure_reason"
                )
            records.append(record)
    return records


def save_run_artifacts(
    out_dir: str | Path,
    label: str,
    records: list[CommandRecord],
    report: EvalReport,
) -> Path:
    """Persist records.jsonl and report.json for predictions made without a backend."""
    out = Path(out_dir)
    _write_jsonl(out / "records.jsonl", [r.to_json_dict() for r in records])
    _write_json(out / "report.json", report_json_dict(label, report))
    return out


def records_to_predictions(records: list[CommandRecord]) -> list[PredictionRecord]:
    """Rebuild scoreable predictions from persisted records."""
    predictions: list[PredictionRecord] = []
    for record in records:
        if record.predicted is not None:
            outcome: ParseOutcome | RequirementVector = RequirementVector.from_bits(
                record.predicted
            )
        else:
            outcome = ParseOutcome.failure(record.failure_reason)
        predictions.append(PredictionRecord(record.command_id, outcome))
    return predictions


# =============================================================================
# Ablation grids
# =============================================================================


@dataclass(frozen=True, slots=True)
class AblationGrid:
    """Cartesian product of explanation modes and shot counts over one base spec."""

    base: ExperimentSpec
    explanation_modes: tuple[ExplanationMode, ...]
    shot_counts: tuple[int, ...]
    # shots are always taken as a prefix of this pool; defaults to the base
    # config's shots
    shot_pool: tuple[ShotExample, ...] | None = None

    def __post_init__(self) -> None:
        modes = tuple(m for m in MODE_ORDER if m in set(self.explanation_modes))
        counts = tuple(sorted(set(self.shot_counts)))
        if not modes or not counts:
            raise ValueError("ablation grid must have at least one mode and one shot count")
        pool = self.shot_pool if self.shot_pool is not None else self.base.prompt_config.shots
        if counts[0] < 0 or counts[-1] > len(pool):
            raise ValueError(
                f"shot counts must be within 0..{len(pool)} (pool size), got {counts}"
            )
        object.__setattr__(self, "explanation_modes", modes)
        object.__setattr__(self, "shot_counts", counts)
        object.__setattr__(self, "shot_pool", pool)

    def cells(self) -> list[tuple[ExplanationMode, int]]:
        """Grid cells in canonical order: mode-major, shots ascending."""
        return [(m, k) for m in self.explanation_modes for k in self.shot_counts]


@dataclass(frozen=True, slots=True)
class AblationCell:
    mode: ExplanationMode
    shot_count: int
    report: EvalReport | None  # None when the cell failed
    error: str | None
    output_dir: Path


def run_ablation(grid: AblationGrid, backend: ChatBackend | None = None) -> list[AblationCell]:
    """Run every grid cell; failures are recorded per cell and the grid continues.

    All cells share one response cache (the injected backend's, or the default
    directory), so re-running a grid replays completed cells from cache.
    Writes ablation.json and ablation.md under the base output_dir.
    """
    base_out = Path(grid.base.output_dir)
    cells: list[AblationCell] = []
    for mode, shot_count in grid.cells():
        cell_dir = base_out / f"{mode.value}_{shot_count}shot"
        config = dataclasses.replace(
            grid.base.prompt_config, mode=mode, shots=grid.shot_pool[:shot_count]
        )
        spec = dataclasses.replace(
            grid.base, prompt_config=config, output_dir=str(cell_dir)
        )
        try:
            result = run_experiment(spec, backend=backend)
            cells.append(AblationCell(mode, shot_count, result.report, None, cell_dir))
        except (DataError, BackendError) as exc:
            log.warning("cell %s/%d failed: %s", mode.value, shot_count, exc)
            cells.append(
                AblationCell(mode, shot_count, None, f"{type(exc).__name__}: {exc}", cell_dir)
            )
    _write_json(base_out / "ablation.json", [_cell_json(c) for c in cells])
    _write_text(base_out / "ablation.md", ablation_table(cells, "md"))
    return cells


def _cell_json(cell: AblationCell) -> dict[str, Any]:
    return {
        "mode": cell.mode.value,
        "shots": cell.shot_count,
        "command_level": format_percent(cell.report.command_level_accuracy)
        if cell.report
        else None,
        "question_level": format_percent(cell.report.question_level_accuracy)
        if cell.report
        else None,
        "error": cell.error,
    }


def ablation_table(cells: list[AblationCell], fmt: str) -> str:
    """Render the (mode, shots, command, question) grid table."""
    header = ["Mode", "Shots", "Command", "Question"]
    rows = []
    for cell in cells:
        if cell.report is not None:
            rows.append(
                [
                    cell.mode.value,
                    str(cell.shot_count),
                    format_percent(cell.report.command_level_accuracy),
                    format_percent(cell.report.question_level_accuracy),
                ]
            )
        else:
            rows.append([cell.mode.value, str(cell.shot_count), "error", cell.error or ""])
    return render_table(header, rows, fmt)


# =============================================================================
# Reports
# =============================================================================


@dataclass(frozen=True, slots=True)
class ResultRow:
    """One display row: a labeled result with preformatted percentages."""

    label: str
    command_pct: str
    question_pct: str
    per_question_pct: tuple[str, ...]

    @classmethod
    def from_eval(cls, label: str, report: EvalReport) -> "ResultRow":
        return cls(
            label=label,
            command_pct=format_percent(report.command_level_accuracy),
            question_pct=format_percent(report.question_level_accuracy),
            per_question_pct=tuple(
                format_percent(acc) for acc in report.per_question_accuracy
            ),
        )


def report_json_dict(label: str, report: EvalReport) -> dict[str, Any]:
    """The report.json schema: display strings plus scoring metadata."""
    return {
        "label": label,
        "failure_policy": report.failure_policy,
        "n_commands": report.n_commands,
        "n_parse_failures": report.n_parse_failures,
        "command_level": format_percent(report.command_level_accuracy),
        "question_level": format_percent(report.question_level_accuracy),
        "per_question": {
            title: format_percent(acc)
            for title, acc in zip(CATEGORY_TITLES, report.per_question_accuracy)
        },
    }


def load_result_row(run_dir: str | Path) -> ResultRow:
    """Rebuild a ResultRow from a run directory's report.json."""
    path = Path(run_dir) / "report.json"
    if not path.is_file():
        raise MissingFile(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return ResultRow(
            label=data["label"],
            command_pct=data["command_level"],
            question_pct=data["question_level"],
            per_question_pct=tuple(data["per_question"][t] for t in CATEGORY_TITLES),
        )
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: not a valid report file: {exc}") from exc


def render_table(header: list[str], rows: list[list[str]], fmt: str) -> str:
    """Render rows in one of the report formats; deterministic for same input."""
    if fmt == "csv":
        import csv
        import io

        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buffer.getvalue()
    if fmt == "md":
        lines = [
            "| " + " | ".join(header) + " |",
            "| " + " | ".join("---" for _ in header) + " |",
        ]
        lines.extend("| " + " | ".join(row) + " |" for row in rows)
        return "\n".join(lines) + "\n"
    if fmt == "table":
        widths = [
            max(len(header[i]), *(len(row[i]) for row in rows)) if rows else len(header[i])
            for i in range(len(header))
        ]
        def fit(cells: list[str]) -> str:
            # first column left-aligned, the rest right-aligned
            parts = [cells[0].ljust(widths[0])]
            parts.extend(c.rjust(w) for c, w in zip(cells[1:], widths[1:]))
            return "  ".join(parts).rstrip()
        lines = [fit(header), fit(["-" * w for w in widths])]
        lines.extend(fit(row) for row in rows)
        return "\n".join(lines) + "\n"
    raise ValueError(f"format must be one of {REPORT_FORMATS}, got {fmt!r}")


def emit_report(rows: list[ResultRow], fmt: str, out_path: str | Path) -> Path:
    """Write a method-comparison table: label, command, overall, 8 categories."""
    if not rows:
        raise ValueError("emit_report needs at least one row")
    header = ["Method", "Command", "Overall", *CATEGORY_TITLES]
    table = [
        [row.label, row.command_pct, row.question_pct, *row.per_question_pct]
        for row in rows
    ]
    out_path = Path(out_path)
    _write_text(out_path, render_table(header, table, fmt))
    return out_path
