"""Benchmark loading, scoring, needle-in-a-haystack generation and run reports."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import cycle, islice
from pathlib import Path

from .agents import TaskKind
from .chunker import Document
from .engine import ChainConfig, run_chain
from .errors import GatedChainError, MalformedRecord, NeedleTooLong
from .metrics import best_rouge_l, normalize_answer, qa_f1, rouge_l  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

DATASET_TASKS = {
    "narrativeqa": TaskKind.QA,
    "qasper": TaskKind.QA,
    "hotpotqa": TaskKind.QA,
    "2wikimqa": TaskKind.QA,
    "musique": TaskKind.QA,
    "govreport": TaskKind.SUMMARIZATION,
    "qmsum": TaskKind.SUMMARIZATION,
    "samsum": TaskKind.FEWSHOT,
}
METRICS = ("auto", "f1", "rougeL")


def task_for_dataset(name: str) -> TaskKind:
    name = name.lower()
    if name.endswith("_e"):  # LongBench-E variants
        name = name[:-2]
    key = re.sub(r"[^a-z0-9]", "", name)
    try:
        return DATASET_TASKS[key]
    except KeyError:
        log.warning("unknown dataset %r, treating it as question answering", name)
        return TaskKind.QA


@dataclass
class EvalSample:
    context: str
    input: str
    answers: list[str]
    dataset: str = ""
    task: TaskKind = TaskKind.QA
    id: str = ""


def load_samples(path: str | Path) -> list[EvalSample]:
    """Read LongBench-style JSONL (``context``, ``input``, ``answers``, ``dataset``)."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise MalformedRecord(lineno, "record is not an object")
            context, answers = rec.get("context"), rec.get("answers")
            if not isinstance(context, str) or not context:
                raise MalformedRecord(lineno, "missing or empty 'context'")
            if isinstance(answers, str):
                answers = [answers]
            if not isinstance(answers, list) or not answers or not all(isinstance(a, str) for a in answers):
                raise MalformedRecord(lineno, "missing or empty 'answers'")
            query = rec.get("input") or ""
            if not isinstance(query, str):
                raise MalformedRecord(lineno, "'input' must be a string")
            dataset = str(rec.get("dataset") or "")
            sample_id = str(rec.get("_id") or rec.get("id") or f"{Path(path).stem}-{lineno}")
            samples.append(EvalSample(context, query, answers, dataset, task_for_dataset(dataset), sample_id))
    return samples


def score(prediction: str, sample: EvalSample, metric: str = "auto") -> float:
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    if metric == "auto":
        metric = "f1" if sample.task is TaskKind.QA else "rougeL"
    if metric == "f1":
        return qa_f1(prediction, sample.answers)
    return best_rouge_l(prediction, sample.answers)


# -- needle in a haystack -----------------------------------------------------

DEFAULT_FILLER = (
    "The valley road climbs slowly past terraced fields and a row of stone barns. "
    "In late autumn the farmers bring the last apples down to the market square. "
    "A narrow bridge crosses the river where the water runs shallow over flat rocks. "
    "Most houses in the village keep a small garden with herbs and a few rows of beans. "
    "On clear evenings the bell tower casts a long shadow across the old cemetery. "
    "The bakery opens before dawn and sells out of rye bread by the middle of the morning. "
    "Travellers sometimes stop at the inn to wait for the weather to turn. "
    "Sheep graze on the upper slopes until the first snow closes the mountain pass."
)


@dataclass
class NeedleSpec:
    total_units: int
    depth: float
    needle: str = "Passcode: 7421-ORCHID."
    query: str = "What is the passcode?"
    gold: str = "7421-ORCHID"
    filler: str = DEFAULT_FILLER

    @property
    def token(self) -> str:
        """The needle's distinctive word, used by offline responders."""
        return max(self.needle.split(), key=lambda w: (any(c.isdigit() for c in w), len(w))).strip(".,;:")


def needle_offset(spec: NeedleSpec) -> int:
    needle_units = len(spec.needle.split())
    return math.floor(spec.depth * (spec.total_units - needle_units))


def generate_needle(spec: NeedleSpec) -> EvalSample:
    """Filler text of ``total_units`` words with the needle on its own line at
    unit offset ``floor(depth * (total - needle_units))``."""
    if not 0.0 <= spec.depth <= 1.0:
        raise ValueError(f"depth must lie in [0, 1], got {spec.depth}")
    needle_words = spec.needle.split()
    if not needle_words:
        raise ValueError("needle must contain at least one word")
    if len(needle_words) > spec.total_units:
        raise NeedleTooLong(f"needle of {len(needle_words)} units does not fit in {spec.total_units}")
    filler_words = spec.filler.split()
    if not filler_words or spec.token in spec.filler:
        raise ValueError("filler must be non-empty and must not contain the needle token")
    offset = needle_offset(spec)
    body = list(islice(cycle(filler_words), spec.total_units - len(needle_words)))
    parts = [" ".join(body[:offset]), spec.needle, " ".join(body[offset:])]
    text = "\n".join(p for p in parts if p)
    if text.count(spec.needle) != 1:
        raise ValueError("needle would occur more than once; choose a different filler")
    return EvalSample(
        context=text,
        input=spec.query,
        answers=[spec.gold],
        dataset="needle",
        task=TaskKind.QA,
        id=f"needle-{spec.total_units}-{spec.depth:g}",
    )


# -- benchmark runs -------------------------------------------------------------


@dataclass
class SampleRow:
    id: str
    dataset: str
    score: float
    seconds: float
    prediction: str = ""
    error: str | None = None


@dataclass
class RunReport:
    dataset: str
    config_digest: str
    metric: str
    rows: list[SampleRow] = field(default_factory=list)

    @property
    def mean_score(self) -> float:
        return sum(r.score for r in self.rows) / len(self.rows) if self.rows else 0.0

    @property
    def mean_seconds(self) -> float:
        return sum(r.seconds for r in self.rows) / len(self.rows) if self.rows else 0.0

    def to_dict(self) -> dict:
        return {
            "schema": "gatedchain.bench/1",
            "dataset": self.dataset,
            "config_digest": self.config_digest,
            "metric": self.metric,
            "rows": [asdict(r) for r in self.rows],
            "summary": {"n": len(self.rows), "mean_score": self.mean_score, "mean_seconds": self.mean_seconds},
        }

    def write(self, path: str | Path) -> list[Path]:
        """Write a tab-separated table plus a JSON twin; returns the paths written."""
        path = Path(path)
        json_path = path if path.suffix == ".json" else path.with_name(path.name + ".json")
        json_path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        if json_path == path:
            return [path]
        lines = ["id\tdataset\tscore\tseconds\terror"]
        lines += [f"{r.id}\t{r.dataset}\t{r.score:.4f}\t{r.seconds:.3f}\t{r.error or ''}" for r in self.rows]
        lines.append(f"mean\t{self.dataset}\t{self.mean_score:.4f}\t{self.mean_seconds:.3f}\t")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return [path, json_path]


def config_digest(config: ChainConfig) -> str:
    blob = json.dumps(config.snapshot(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _run_one(sample: EvalSample, config: ChainConfig, metric: str) -> SampleRow:
    cfg = replace(config, task=sample.task)
    doc = Document(sample.context, id=sample.id, mode=cfg.unit_mode)
    start = time.perf_counter()
    try:
        result = run_chain(doc, sample.input, cfg)
    except GatedChainError as exc:
        seconds = time.perf_counter() - start
        log.warning("sample %s failed: %s", sample.id, exc)
        return SampleRow(sample.id, sample.dataset, 0.0, seconds, "", f"{type(exc).__name__}: {exc}")
    seconds = time.perf_counter() - start
    return SampleRow(sample.id, sample.dataset, score(result.answer, sample, metric), seconds, result.answer)


def run_benchmark(samples: list[EvalSample], config: ChainConfig, metric: str = "auto", workers: int | None = None) -> RunReport:
    if not samples:
        raise ValueError("no samples to evaluate")
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    config.validate()
    workers = workers or config.workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda s: _run_one(s, config, metric), samples))
    else:
        rows = [_run_one(s, config, metric) for s in samples]
    datasets = sorted({s.dataset for s in samples})
    return RunReport(",".join(datasets), config_digest(config), metric, rows)
