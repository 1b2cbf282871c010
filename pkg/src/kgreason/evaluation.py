"""Hits@1 evaluation runs and width/iteration sweeps over JSONL datasets."""

from __future__ import annotations

import csv
import io
import json
import logging
import random
import re
import string
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from .pipeline import Pipeline

logger = logging.getLogger(__name__)

NORMALIZATION_VERSION = "hits1-norm-v1"
REPORT_SCHEMA = "kgreason.report/1"

_PUNCT = string.punctuation + "\u201c\u201d\u2018\u2019\u00ab\u00bb\u2026\u2013\u2014"
_ARTICLE_RE = re.compile(r"^(a|an|the)\s+")
_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    question: str
    answers: list[str]

    def __post_init__(self):
        if not self.answers or not all(isinstance(a, str) and a.strip() for a in self.answers):
            raise ValueError("answers must be a non-empty list of non-empty strings")


def load_dataset(path: str | Path, sample: int | None = None, seed: int = 0) -> list[DatasetRecord]:
    """Read JSONL records ``{"id", "question", "answers"}`` in file order.

    With ``sample``, a seeded subset is drawn and kept in file order.
    """
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                answers = doc["answers"]
                if isinstance(answers, str):
                    answers = [answers]
                records.append(DatasetRecord(str(doc["id"]), str(doc["question"]), list(answers)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc!r}") from exc
    if sample is not None and sample < len(records):
        keep = sorted(random.Random(seed).sample(range(len(records)), sample))
        records = [records[i] for i in keep]
    return records


def normalize_answer(text: str) -> str:
    s = " ".join(text.casefold().split())
    s = s.strip(_PUNCT + " ")
    s = _ARTICLE_RE.sub("", s)
    s = s.strip(_PUNCT + " ")
    if _NUMBER_RE.match(s):
        num = Fraction(s)
        s = str(num.numerator) if num.denominator == 1 else repr(float(num))
    return s


def hits_at_1(prediction: str, gold: Sequence[str]) -> bool:
    p = normalize_answer(prediction)
    return bool(p) and any(p == normalize_answer(a) for a in gold)


@dataclass
class QuestionResult:
    id: str
    question: str
    gold: list[str]
    prediction: str | None = None
    correct: bool = False
    subgraph_size: int = 0
    trace_file: str | None = None
    combined_score: float | None = None
    error: str | None = None
    latency: float = 0.0

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "gold": self.gold,
            "prediction": self.prediction,
            "correct": self.correct,
            "subgraph_size": self.subgraph_size,
            "trace_file": self.trace_file,
            "combined_score": self.combined_score,
            "error": self.error,
        }


@dataclass
class RunReport:
    results: list[QuestionResult]
    config: dict
    selector: str
    backend: str

    @property
    def correct(self) -> int:
        return sum(r.correct for r in self.results)

    @property
    def total(self) -> int:
        return len(self.results)

    @property
    def empty(self) -> bool:
        return not self.results

    @property
    def hits_at_1(self) -> Fraction | None:
        return None if self.empty else Fraction(self.correct, self.total)

    def summary_line(self) -> str:
        if self.empty:
            return "hits@1 n/a (0/0)"
        return f"hits@1 {float(self.hits_at_1):.3f} ({self.correct}/{self.total})"

    def to_json(self) -> dict:
        h = self.hits_at_1
        return {
            "schema": REPORT_SCHEMA,
            "normalization": NORMALIZATION_VERSION,
            "selector": self.selector,
            "backend": self.backend,
            "config": self.config,
            "n_questions": self.total,
            "correct": self.correct,
            "empty": self.empty,
            "hits_at_1": None if h is None else f"{h.numerator}/{h.denominator}",
            "hits_at_1_value": None if h is None else float(h),
            "results": [r.to_json() for r in self.results],
        }


def _safe_name(idx: int, rid: str) -> str:
    return f"{idx:04d}_{re.sub(r'[^A-Za-z0-9_.-]', '_', rid)[:80]}.json"


def _dump(doc) -> str:
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def _evaluate_one(pipeline: "Pipeline", idx: int, rec: DatasetRecord, out_dir: Path | None) -> QuestionResult:
    from .pipeline import PipelineError

    res = QuestionResult(rec.id, rec.question, list(rec.answers))
    started = time.perf_counter()
    try:
        run = pipeline.answer(_question(rec))
    except PipelineError as exc:
        res.error = f"{exc.stage}: {exc}"
        run = exc.partial
    except Exception as exc:  # one bad question must not end the run
        res.error = f"{type(exc).__name__}: {exc}"
        run = None
    if run is not None:
        if run.subgraph is not None:
            res.subgraph_size = len(run.subgraph)
        if run.answer is not None:
            res.prediction = run.answer.answer_text
            res.correct = hits_at_1(run.answer.answer_text, rec.answers)
            res.combined_score = run.answer.combined_score
        if out_dir is not None:
            name = _safe_name(idx, rec.id)
            (out_dir / "traces").mkdir(parents=True, exist_ok=True)
            (out_dir / "traces" / name).write_text(_dump(run.to_json()), encoding="utf-8")
            res.trace_file = f"traces/{name}"
    res.latency = time.perf_counter() - started
    return res


def _question(rec: DatasetRecord):
    from .selector import Question

    return Question(rec.id, rec.question, tuple(rec.answers))


def write_report(report: RunReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(_dump(report.to_json()), encoding="utf-8")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "prediction", "correct", "subgraph_size", "combined_score", "error"])
    for r in report.results:
        w.writerow([r.id, r.prediction or "", int(r.correct), r.subgraph_size,
                    "" if r.combined_score is None else repr(r.combined_score), r.error or ""])
    (out_dir / "summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    timings = {r.id: round(r.latency, 6) for r in report.results}
    (out_dir / "timings.json").write_text(_dump(timings), encoding="utf-8")


def run_eval(
    records: Sequence[DatasetRecord],
    pipeline: "Pipeline",
    out_dir: str | Path | None = None,
    parallelism: int = 1,
) -> RunReport:
    """Answer every record; failures count as incorrect and carry an error note."""
    out = Path(out_dir) if out_dir is not None else None
    if parallelism > 1:
        with ThreadPoolExecutor(parallelism) as pool:
            results = list(pool.map(lambda p: _evaluate_one(pipeline, p[0], p[1], out), enumerate(records)))
    else:
        results = [_evaluate_one(pipeline, i, r, out) for i, r in enumerate(records)]
    report = RunReport(results, pipeline.snapshot(), pipeline.selector_name, pipeline.backend_name)
    if out is not None:
        write_report(report, out)
    return report


@dataclass
class SweepCell:
    relation_width: int
    iterations: int
    seed: int
    correct: int
    total: int

    @property
    def hits_at_1(self) -> float | None:
        return self.correct / self.total if self.total else None


@dataclass
class SweepGrid:
    ks: list[int]
    ns: list[int]
    seeds: list[int]
    cells: list[SweepCell] = field(default_factory=list)

    def accuracy(self, k: int, n: int) -> float | None:
        """Accuracy of cell (k, n) pooled over seeds."""
        hits = [c for c in self.cells if c.relation_width == k and c.iterations == n]
        total = sum(c.total for c in hits)
        return sum(c.correct for c in hits) / total if total else None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["K", "N", "seed", "hits_at_1", "n_questions"])
        for c in self.cells:
            w.writerow([c.relation_width, c.iterations, c.seed,
                        "" if c.hits_at_1 is None else f"{c.hits_at_1:.6f}", c.total])
        return buf.getvalue()


def run_sweep(
    records: Sequence[DatasetRecord],
    pipeline: "Pipeline",
    ks: Iterable[int] = (1, 2, 3),
    ns: Iterable[int] = (1, 2, 3),
    seeds: Iterable[int] = (0,),
    out_dir: str | Path | None = None,
    plot_format: str | None = "png",
    parallelism: int = 1,
) -> SweepGrid:
    """One :func:`run_eval` per (K, N, seed) cell, everything else held fixed."""
    ks, ns, seeds = sorted(set(ks)), sorted(set(ns)), list(dict.fromkeys(seeds))
    if not ks or not ns or not seeds:
        raise ValueError("sweep ranges must be non-empty")
    grid = SweepGrid(ks, ns, seeds)
    out = Path(out_dir) if out_dir is not None else None
    for n in ns:
        for k in ks:
            for seed in seeds:
                cfg = replace(pipeline.expansion, relation_width=k, iterations=n)
                cell_pipe = pipeline.with_overrides(expansion=cfg, seed=seed)
                cell_dir = out / "cells" / f"K{k}_N{n}_s{seed}" if out is not None else None
                rep = run_eval(records, cell_pipe, cell_dir, parallelism)
                grid.cells.append(SweepCell(k, n, seed, rep.correct, rep.total))
                logger.info("sweep K=%d N=%d seed=%d: %s", k, n, seed, rep.summary_line())
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(grid.to_csv(), encoding="utf-8")
        if plot_format:
            from .plotting import plot_sweep

            plot_sweep(grid, out / f"sweep.{plot_format}")
    return grid
