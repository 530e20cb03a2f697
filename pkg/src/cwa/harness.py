"""Prompt bank, experiment runner and transcript ingestion.

A run directory contains::

    config.json     experiment configuration snapshot
    records.jsonl   one JSON object per (template, N, repetition)
    verdicts.csv    one row per generation step
    cwa.csv         one row per (generation, component)
    metrics.csv     error statistics over the scored records

Nothing in a run directory depends on wall-clock time, so identical configs
produce byte-identical directories.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .attribution import CwaReport, cwa, dla_record
from .errors import CapacityError, DomainError
from .judge import (ErrorStats, Outcome, StepVerdict, check_target, descriptive_stats,
                    judge_generation, mae)
from .model import DecodeParams, generate
from .tokenizer import BOS_ID, count_words, decode, encode

log = logging.getLogger(__name__)

EXPERIMENTS = ("ENG-IT", "ENG-BASE", "ITA-IT", "ITA-BASE")
TEMPLATE_SETS = ("IT", "BASE")
LANGUAGES = ("EN", "IT")
MATCH_MODES = ("all", "matched", "mismatched", "mixed")
INSTRUCTIONAL = "instructional"
PREFIX = "prefix"


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    set: str
    language: str
    style: str
    text: str  # contains the placeholder "{N}"
    builtin: bool = True

    def render(self, n: int) -> str:
        return self.text.replace("{N}", str(n))


def _pair(tid, tset, style, en, it):
    return (PromptTemplate(tid, tset, "EN", style, en),
            PromptTemplate(tid, tset, "IT", style, it))


TEMPLATES: tuple[PromptTemplate, ...] = (
    *_pair("a", "IT", INSTRUCTIONAL,
           "Generate a sentence using exactly {N} words.",
           "Genera una frase usando esattamente {N} parole."),
    *_pair("b", "IT", INSTRUCTIONAL,
           "Write a text with exactly {N} words.",
           "Scrivi un testo con esattamente {N} parole."),
    *_pair("c", "IT", INSTRUCTIONAL,
           "Write a sentence containing {N} words.",
           "Scrivi una frase contenente {N} parole."),
    *_pair("d", "IT", PREFIX,
           "This is a sentence with {N} words:",
           "Questa è una frase con {N} parole:"),
    *_pair("a", "BASE", PREFIX,
           "This is a sentence with {N} words:",
           "Questa è una frase con {N} parole:"),
    *_pair("b", "BASE", PREFIX,
           "This phrase has exactly {N} words from start to finish:",
           "Questa frase ha esattamente {N} parole dall'inizio alla fine:"),
    *_pair("c", "BASE", PREFIX,
           "Here's a phrase that includes {N} words in total:",
           "Ecco una frase che include in totale {N} parole:"),
    *_pair("d", "BASE", INSTRUCTIONAL,
           "Generate a sentence using exactly {N} words.",
           "Genera una frase usando esattamente {N} parole."),
)


def experiment_parts(tag: str) -> tuple[str, str]:
    """``"ITA-BASE"`` -> ``("IT", "BASE")`` (language, model type)."""
    if tag not in EXPERIMENTS:
        raise DomainError(f"unknown experiment tag {tag!r}; expected one of {EXPERIMENTS}")
    lang, kind = tag.split("-")
    return ("EN" if lang == "ENG" else "IT"), kind


def expected_style(model_type: str) -> str:
    return INSTRUCTIONAL if model_type == "IT" else PREFIX


def is_matched(tag: str, style: str) -> bool:
    return style == expected_style(experiment_parts(tag)[1])


def panels(tag: str, style: str) -> list[str]:
    """Which error-distribution panels a (experiment, template style) lands in.

    ``mixed`` pairs matched BASE results with mismatched IT results.
    """
    _, kind = experiment_parts(tag)
    matched = is_matched(tag, style)
    out = ["matched" if matched else "mismatched"]
    if (kind == "BASE") == matched:
        out.append("mixed")
    return out


def find_template(tset: str, tid: str, language: str) -> PromptTemplate:
    for t in TEMPLATES:
        if (t.set, t.id, t.language) == (tset, tid, language):
            return t
    raise DomainError(f"unknown template {tset}:{tid} ({language})")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    model_path: str = ""
    template_sets: tuple[str, ...] | None = None   # None -> the model type's own set
    template_ids: tuple[str, ...] | None = None    # None -> a, b, c, d
    match_mode: str = "all"
    n_min: int = 0
    n_max: int = 9
    repetitions: int = 20
    decode: DecodeParams = field(default_factory=DecodeParams)
    master_seed: int = 0
    eos_rule: bool = True

    def __post_init__(self):
        experiment_parts(self.experiment)
        if self.match_mode not in MATCH_MODES:
            raise DomainError(f"unknown match mode {self.match_mode!r}; expected one of {MATCH_MODES}")
        for s in self.template_sets or ():
            if s not in TEMPLATE_SETS:
                raise DomainError(f"unknown template set {s!r}")
        for tid in self.template_ids or ():
            if tid not in "abcd" or len(tid) != 1:
                raise DomainError(f"unknown template id {tid!r}")
        if self.repetitions < 1:
            raise DomainError("repetitions must be >= 1")
        check_target(self.n_min)
        check_target(self.n_max)
        if self.n_min > self.n_max:
            raise DomainError(f"empty N range [{self.n_min}, {self.n_max}]")

    @property
    def language(self) -> str:
        return experiment_parts(self.experiment)[0]

    @property
    def model_type(self) -> str:
        return experiment_parts(self.experiment)[1]

    def to_json(self) -> dict:
        d = asdict(self)
        d["template_sets"] = list(self.template_sets) if self.template_sets else None
        d["template_ids"] = list(self.template_ids) if self.template_ids else None
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ExperimentConfig":
        """Inverse of ``to_json``; also accepts a run directory's config.json."""
        d = dict(d)
        d.pop("source", None)
        d["decode"] = DecodeParams(**d["decode"])
        for key in ("template_sets", "template_ids"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class Prompt:
    template: PromptTemplate
    n: int

    @property
    def text(self) -> str:
        return self.template.render(self.n)


def select_templates(config: ExperimentConfig) -> list[PromptTemplate]:
    sets = config.template_sets or (config.model_type,)
    ids = config.template_ids or ("a", "b", "c", "d")
    want_matched = {"all": None, "matched": True, "mismatched": False,
                    "mixed": config.model_type == "BASE"}[config.match_mode]
    chosen = []
    for tset in TEMPLATE_SETS:
        if tset not in sets:
            continue
        for tid in sorted(ids):
            t = find_template(tset, tid, config.language)
            if want_matched is None or is_matched(config.experiment, t.style) == want_matched:
                chosen.append(t)
    return chosen


def build_prompts(config: ExperimentConfig) -> list[Prompt]:
    """Templates in (set, id) order, each expanded over the N range."""
    return [Prompt(t, n) for t in select_templates(config)
            for n in range(config.n_min, config.n_max + 1)]


def derive_seed(master: int, template: PromptTemplate, n: int, repetition: int) -> int:
    key = f"{master}|{template.set}|{template.id}|{template.language}|{n}|{repetition}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


# -- running -------------------------------------------------------------------

@dataclass
class RunItem:
    """Everything produced for one (prompt, repetition)."""

    meta: dict
    record: object = None
    verdicts: list[StepVerdict] = field(default_factory=list)
    outcome: Outcome | None = None
    report: CwaReport | None = None
    failure: str | None = None


@dataclass
class RunResult:
    config: ExperimentConfig
    items: list[RunItem]
    stats: ErrorStats | None
    mae: float | None


def scored_error(item_outcome: Outcome | None, n_gen: int, n_target: int,
                 include_truncated: bool = False) -> int | None:
    if item_outcome is None:
        return None
    if item_outcome is Outcome.TRUNCATED and not include_truncated:
        return None
    return n_gen - n_target


def run_experiment(config: ExperimentConfig, model=None, out_dir: str | Path | None = None) -> RunResult:
    """generate -> judge -> per-step DLA -> CWA for every prompt x repetition.

    ``model`` is an already loaded ``(weights, cfg, vocab)``; otherwise the
    file at ``config.model_path`` is loaded.
    """
    if model is None:
        from .model_io import load
        model = load(config.model_path)
    weights, cfg, vocab = model
    items = []
    for prompt in build_prompts(config):
        prompt_ids = [BOS_ID] + encode(prompt.text, vocab)
        for rep in range(config.repetitions):
            seed = derive_seed(config.master_seed, prompt.template, prompt.n, rep)
            meta = {
                "experiment": config.experiment, "template_set": prompt.template.set,
                "template_id": prompt.template.id, "language": prompt.template.language,
                "style": prompt.template.style,
                "matched": is_matched(config.experiment, prompt.template.style),
                "n_target": prompt.n, "repetition": rep, "seed": seed, "prompt": prompt.text,
            }
            item = RunItem(meta)
            try:
                record = generate(prompt_ids, weights, cfg, replace(config.decode, seed=seed))
            except CapacityError as exc:
                log.warning("skipping %s:%s N=%d rep=%d: %s", prompt.template.set,
                            prompt.template.id, prompt.n, rep, exc)
                item.failure = str(exc)
                items.append(item)
                continue
            record.meta = meta
            item.record = record
            item.verdicts, item.outcome = judge_generation(record, prompt.n, vocab, config.eos_rule)
            dlas = dla_record(record, weights, cfg)
            item.report = cwa([v.sign for v in item.verdicts], dlas, record, meta)
            items.append(item)
    errors = [e for e in (_item_error(it) for it in items) if e is not None]
    result = RunResult(config, items,
                       descriptive_stats(errors) if errors else None,
                       mae(errors) if errors else None)
    if out_dir is not None:
        write_run(result, vocab, out_dir)
    return result


def _item_error(item: RunItem) -> int | None:
    if item.outcome is None:
        return None
    return scored_error(item.outcome, item.verdicts[-1].words, item.meta["n_target"])


# -- serialisation -------------------------------------------------------------

VERDICT_FIELDS = ["experiment", "template_set", "template_id", "n_target", "repetition",
                  "step", "token", "words", "is_eos", "sign"]
CWA_FIELDS = ["experiment", "template_set", "template_id", "language", "matched", "n_target",
              "repetition", "k", "component_kind", "layer", "head", "cwa"]
METRIC_FIELDS = ["experiment", "n_records", "n_scored", "n_truncated", "n_failed",
                 "mae", "avg", "std", "min", "q25", "q50", "q75", "max"]


def fmt(value) -> str:
    """Shortest round-tripping text for CSV cells."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, fields: Sequence[str], rows: Iterable[dict]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([fmt(row.get(f)) for f in fields])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def record_row(meta: dict, *, prompt_ids=None, emitted_ids=None, text: str | None,
               n_gen: int | None, outcome: Outcome | None, failure: str | None) -> dict:
    row = dict(meta)
    row.update({
        "prompt_ids": prompt_ids, "emitted_ids": emitted_ids, "text": text,
        "n_gen": n_gen, "outcome": outcome.value if outcome else None,
        "error": (n_gen - meta["n_target"]) if n_gen is not None else None,
        "failure": failure,
    })
    return row


def metrics_row(experiment: str, rows: Sequence[dict], include_truncated: bool = False) -> dict:
    errors = [scored_error(Outcome(r["outcome"]), r["n_gen"], r["n_target"], include_truncated)
              for r in rows if r["outcome"] is not None]
    errors = [e for e in errors if e is not None]
    out = {
        "experiment": experiment, "n_records": len(rows), "n_scored": len(errors),
        "n_truncated": sum(r["outcome"] == Outcome.TRUNCATED.value for r in rows),
        "n_failed": sum(r["failure"] is not None for r in rows),
    }
    if errors:
        out["mae"] = mae(errors)
        out.update(descriptive_stats(errors).as_row())
    return out


def write_run(result: RunResult, vocab, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"source": "run", **result.config.to_json()}, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    rows, verdict_rows, cwa_rows = [], [], []
    for item in result.items:
        rec = item.record
        if rec is None:
            rows.append(record_row(item.meta, text=None, n_gen=None, outcome=None,
                                   failure=item.failure))
            continue
        text = decode(rec.emitted_ids, vocab).decode("utf-8", errors="replace")
        rows.append(record_row(item.meta, prompt_ids=rec.prompt_ids, emitted_ids=rec.emitted_ids,
                               text=text, n_gen=item.verdicts[-1].words, outcome=item.outcome,
                               failure=None))
        key = {k: item.meta[k] for k in ("experiment", "template_set", "template_id",
                                         "n_target", "repetition")}
        for v in item.verdicts:
            verdict_rows.append({**key, "step": v.step, "token": v.token, "words": v.words,
                                 "is_eos": v.is_eos, "sign": v.sign})
        for comp, value in item.report.values.items():
            cwa_rows.append({**key, "language": item.meta["language"],
                             "matched": item.meta["matched"], "k": item.report.k,
                             "component_kind": comp.kind,
                             "layer": comp.layer if comp.layer >= 0 else None,
                             "head": comp.head if comp.head >= 0 else None, "cwa": value})
    (out / "records.jsonl").write_text("".join(_dump_json(r) + "\n" for r in rows), encoding="utf-8")
    write_csv(out / "verdicts.csv", VERDICT_FIELDS, verdict_rows)
    write_csv(out / "cwa.csv", CWA_FIELDS, cwa_rows)
    write_csv(out / "metrics.csv", METRIC_FIELDS, [metrics_row(result.config.experiment, rows)])
    return out


# -- transcripts ---------------------------------------------------------------

TRANSCRIPT_FIELDS = ("experiment", "template_id", "language", "n_target", "repetition", "text")


@dataclass
class IngestResult:
    rows: list[dict]
    outcomes: list[Outcome]
    stats: dict[str, ErrorStats]
    mae: dict[str, float]
    problems: list[str]


def _parse_transcript_line(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DomainError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise DomainError("row is not a JSON object")
    missing = [f for f in TRANSCRIPT_FIELDS if f not in obj]
    if missing:
        raise DomainError(f"missing fields {missing}")
    language, kind = experiment_parts(obj["experiment"])
    if obj["language"] not in LANGUAGES:
        raise DomainError(f"unknown language {obj['language']!r}")
    if obj["template_id"] not in ("a", "b", "c", "d"):
        raise DomainError(f"unknown template id {obj['template_id']!r}")
    if not isinstance(obj["text"], str):
        raise DomainError("text must be a string")
    if not isinstance(obj["repetition"], int) or obj["repetition"] < 0:
        raise DomainError("repetition must be a nonnegative integer")
    check_target(obj["n_target"])
    token_ids = obj.get("token_ids")
    if token_ids is not None and not (isinstance(token_ids, list)
                                      and all(isinstance(t, int) for t in token_ids)):
        raise DomainError("token_ids must be a list of integers")
    return obj


def ingest_transcripts(path: str | Path, out_dir: str | Path | None = None) -> IngestResult:
    """Score externally produced generations by word count only.

    Transcript texts are complete outputs, so every row counts as terminated.
    Malformed rows are skipped and listed in ``problems`` with their line number.
    """
    path = Path(path)
    rows, outcomes, problems = [], [], []
    lines = path.read_text(encoding="utf-8", errors="strict").splitlines()
    if not any(line.strip() for line in lines):
        raise DomainError(f"{path}: transcript file has no data")
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = _parse_transcript_line(line)
        except DomainError as exc:
            problems.append(f"{path}:{lineno}: {exc}")
            continue
        tset = experiment_parts(obj["experiment"])[1]
        template = find_template(tset, obj["template_id"], obj["language"])
        n_gen = count_words(obj["text"])
        outcome = (Outcome.SUCCESS if n_gen == obj["n_target"]
                   else Outcome.TOO_SHORT if n_gen < obj["n_target"] else Outcome.TOO_LONG)
        meta = {
            "experiment": obj["experiment"], "template_set": tset,
            "template_id": obj["template_id"], "language": obj["language"],
            "style": template.style, "matched": is_matched(obj["experiment"], template.style),
            "n_target": obj["n_target"], "repetition": obj["repetition"], "seed": None,
            "prompt": template.render(obj["n_target"]),
        }
        rows.append(record_row(meta, emitted_ids=obj.get("token_ids"), text=obj["text"],
                               n_gen=n_gen, outcome=outcome, failure=None))
        outcomes.append(outcome)
    if not rows:
        raise DomainError(f"{path}: no well-formed transcript rows")
    by_exp: dict[str, list[dict]] = {}
    for r in rows:
        by_exp.setdefault(r["experiment"], []).append(r)
    stats = {e: descriptive_stats([r["error"] for r in rs]) for e, rs in sorted(by_exp.items())}
    maes = {e: mae([r["error"] for r in rs]) for e, rs in sorted(by_exp.items())}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps({"source": "transcripts", "path": path.name}, sort_keys=True, indent=2) + "\n",
            encoding="utf-8")
        (out / "records.jsonl").write_text("".join(_dump_json(r) + "\n" for r in rows),
                                           encoding="utf-8")
        write_csv(out / "verdicts.csv", VERDICT_FIELDS, [])
        write_csv(out / "cwa.csv", CWA_FIELDS, [])
        write_csv(out / "metrics.csv", METRIC_FIELDS,
                  [metrics_row(e, rs) for e, rs in sorted(by_exp.items())])
    return IngestResult(rows, outcomes, stats, maes, problems)
