"""Regenerate the shipped test fixtures under tests/fixtures/.

    python3 scripts/make_fixture.py            # rewrite fixtures and goldens
    python3 scripts/make_fixture.py --check    # exit 1 if anything would change
"""
from __future__ import annotations

import argparse
import filecmp
import json
import shutil
import sys
import tempfile
from pathlib import Path

from cwa.harness import ExperimentConfig, run_experiment
from cwa.model import DecodeParams, ModelConfig
from cwa.model_io import RigSpec, make_reference_model, make_rigged_model, save
from cwa.report import aggregate, emit_csv

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

TINY = ModelConfig(n_layers=2, n_heads=2, d_model=16, d_ff=32, vocab_size=300, max_seq=96)
RIG = dict(layer=1, scale=0.3)
MASTER_SEED = 20240917
RUNS = {
    "run_eng_it": dict(experiment="ENG-IT", template_sets=("IT", "BASE")),
    "run_ita_base": dict(experiment="ITA-BASE"),
}
RUN_KW = dict(n_min=3, n_max=5, repetitions=3, master_seed=MASTER_SEED,
              decode=DecodeParams(mode="top-p", temperature=0.1, top_p=0.9, max_new_tokens=24))

# Summary-statistics fixture: 600 rows, errors 53 x (-1), 11 x (+1), 536 x 0.
TABLE_COUNTS = {-1: 53, 1: 11, 0: 536}
WORDS = ["The", "dog", "runs", "fast", "home", "now", "again", "today", "here", "there"]


def tiny_model():
    weights, cfg, vocab = make_reference_model(7, TINY)
    weights = make_rigged_model(weights, cfg, RigSpec(RIG["layer"], "token", vocab.eos,
                                                      RIG["scale"]))
    return weights, cfg, vocab


def _sentence(n: int) -> str:
    return " ".join(WORDS[i % len(WORDS)] for i in range(n)) + ("." if n else "")


def small_transcripts() -> list[dict]:
    rows = [("The dog runs.", 3), ("A cat, the hat!", 4), ("Dogs run", 3), ("Il cane corre veloce", 3)]
    return [{"experiment": "ENG-IT", "template_id": "a", "language": "EN", "n_target": n,
             "repetition": i, "text": text} for i, (text, n) in enumerate(rows)]


def table_transcripts() -> list[dict]:
    out, i = [], 0
    for error, count in sorted(TABLE_COUNTS.items()):
        for _ in range(count):
            n = 3 + i % 7
            tid = "abc"[i % 3]
            out.append({"experiment": "ENG-IT", "template_id": tid, "language": "EN",
                        "n_target": n, "repetition": i // 21, "text": _sentence(n + error)})
            i += 1
    return out


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.write_text("".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n"
                            for r in rows), encoding="utf-8")


def build(root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    model = tiny_model()
    save(*model, root / "tiny.cwam")
    runs = []
    for name, kw in RUNS.items():
        config = ExperimentConfig(model_path="tiny.cwam", **kw, **RUN_KW)
        run_experiment(config, model=model, out_dir=root / name)
        runs.append(root / name)
    emit_csv(aggregate(runs), root / "golden")
    _write_jsonl(root / "transcripts_small.jsonl", small_transcripts())
    _write_jsonl(root / "transcripts_table.jsonl", table_transcripts())


def _same_tree(a: Path, b: Path) -> list[str]:
    diffs = []
    for p in sorted(b.rglob("*")):
        if p.is_file():
            q = a / p.relative_to(b)
            if not q.exists() or not filecmp.cmp(p, q, shallow=False):
                diffs.append(str(p.relative_to(b)))
    return diffs


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args(argv)
    if args.check:
        with tempfile.TemporaryDirectory() as tmp:
            build(Path(tmp))
            diffs = _same_tree(FIXTURES, Path(tmp))
        for d in diffs:
            print(f"differs: {d}")
        return 1 if diffs else 0
    for name in list(RUNS) + ["golden"]:
        shutil.rmtree(FIXTURES / name, ignore_errors=True)
    build(FIXTURES)
    print(f"fixtures written to {FIXTURES}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
