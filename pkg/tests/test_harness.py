import json
from dataclasses import replace
from statistics import fmean

import pytest
from hypothesis import given, settings, strategies as st

from cwa.errors import DomainError
from cwa.harness import (EXPERIMENTS, TEMPLATES, ExperimentConfig, build_prompts, derive_seed,
                         find_template, ingest_transcripts, panels, run_experiment,
                         select_templates)
from cwa.judge import Outcome
from cwa.model import DecodeParams, ModelConfig
from cwa.model_io import RigSpec, make_reference_model, make_rigged_model
from cwa.tokenizer import EOS_ID


def test_sixteen_templates_with_cross_condition_entries():
    assert len(TEMPLATES) == 16
    assert len({(t.id, t.set, t.language) for t in TEMPLATES}) == 16
    for lang in ("EN", "IT"):
        assert find_template("IT", "d", lang).style == "prefix"
        assert find_template("BASE", "d", lang).style == "instructional"
        for tid in "abc":
            assert find_template("IT", tid, lang).style == "instructional"
            assert find_template("BASE", tid, lang).style == "prefix"
    assert all(t.text.count("{N}") == 1 for t in TEMPLATES)


def test_rendering_verbatim():
    assert find_template("IT", "a", "EN").render(3) == "Generate a sentence using exactly 3 words."
    assert find_template("IT", "a", "IT").render(3) == "Genera una frase usando esattamente 3 parole."
    assert find_template("BASE", "a", "EN").render(7) == "This is a sentence with 7 words:"


@pytest.mark.parametrize("tag", EXPERIMENTS)
def test_eighty_prompts_per_language(tag):
    prompts = build_prompts(ExperimentConfig(tag, template_sets=("IT", "BASE")))
    assert len(prompts) == 80
    assert len({(p.template.set, p.template.id, p.n) for p in prompts}) == 80
    assert [p.n for p in prompts[:10]] == list(range(10))


def test_single_template_single_n():
    cfg = ExperimentConfig("ENG-IT", template_ids=("a",), n_min=3, n_max=3)
    (prompt,) = build_prompts(cfg)
    assert prompt.text == "Generate a sentence using exactly 3 words."


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(EXPERIMENTS),
       st.sampled_from([None, ("IT",), ("BASE",), ("IT", "BASE")]),
       st.sampled_from([None, ("a",), ("b", "d"), ("a", "b", "c")]),
       st.sampled_from(["all", "matched", "mismatched", "mixed"]),
       st.integers(0, 9), st.integers(0, 9))
def test_prompt_count_law(tag, sets, ids, mode, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    cfg = ExperimentConfig(tag, template_sets=sets, template_ids=ids, match_mode=mode,
                           n_min=lo, n_max=hi)
    assert len(build_prompts(cfg)) == len(select_templates(cfg)) * (hi - lo + 1)


@pytest.mark.parametrize("tag", EXPERIMENTS)
def test_matched_mismatched_partition(tag):
    base = ExperimentConfig(tag)
    allt = select_templates(base)
    matched = select_templates(replace(base, match_mode="matched"))
    mismatched = select_templates(replace(base, match_mode="mismatched"))
    assert not set(matched) & set(mismatched)
    assert set(matched) | set(mismatched) == set(allt) and len(allt) == 4
    assert [t.id for t in mismatched] == ["d"]
    for t in allt:
        p = panels(tag, t.style)
        assert ("matched" in p) == (t in matched)


def test_config_validation_and_json():
    with pytest.raises(DomainError):
        ExperimentConfig("ENG-XX")
    with pytest.raises(DomainError):
        ExperimentConfig("ENG-IT", repetitions=0)
    with pytest.raises(DomainError):
        ExperimentConfig("ENG-IT", n_min=5, n_max=4)
    with pytest.raises(DomainError):
        ExperimentConfig("ENG-IT", template_ids=("e",))
    cfg = ExperimentConfig("ITA-BASE", template_sets=("IT", "BASE"), template_ids=("a", "d"),
                           decode=DecodeParams(mode="top-p", seed=3))
    assert ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg


def test_seed_derivation_is_stable_and_distinct():
    t = find_template("IT", "a", "EN")
    assert derive_seed(0, t, 3, 0) == derive_seed(0, t, 3, 0)
    seeds = {derive_seed(0, t, n, r) for n in range(10) for r in range(20)}
    assert len(seeds) == 200
    assert derive_seed(1, t, 3, 0) != derive_seed(0, t, 3, 0)
    assert 0 <= derive_seed(0, t, 3, 0) < 2 ** 64


def test_greedy_repetitions_identical(tiny):
    cfg = ExperimentConfig("ENG-IT", template_ids=("a",), n_min=3, n_max=4, repetitions=2,
                           decode=DecodeParams(max_new_tokens=6))
    items = run_experiment(cfg, model=tiny).items
    for a, b in zip(items[::2], items[1::2]):
        assert a.record.emitted_ids == b.record.emitted_ids
        assert a.report.values == b.report.values


def test_rigged_always_eos_gives_mae_mean_n(tiny):
    weights, mcfg, vocab = tiny
    rigged = make_rigged_model(weights, mcfg, RigSpec(mcfg.n_layers - 1, "token", EOS_ID, 1e4))
    cfg = ExperimentConfig("ENG-IT", n_min=1, n_max=6, repetitions=2,
                           decode=DecodeParams(max_new_tokens=4))
    result = run_experiment(cfg, model=(rigged, mcfg, vocab))
    assert all(it.outcome is Outcome.TOO_SHORT and it.record.k == 1 for it in result.items)
    assert all(it.verdicts[-1].words == 0 for it in result.items)
    assert result.mae == pytest.approx(fmean(it.meta["n_target"] for it in result.items))


def test_capacity_error_is_per_prompt(tiny):
    weights, _, vocab = tiny
    small = ModelConfig(2, 2, 16, 32, 300, 20)
    cfg = ExperimentConfig("ENG-BASE", n_min=3, n_max=3, repetitions=1,
                           decode=DecodeParams(max_new_tokens=6))
    w, mcfg, _ = make_reference_model(3, small)
    result = run_experiment(cfg, model=(w, mcfg, vocab))
    failed = [it for it in result.items if it.failure]
    assert failed and len(failed) < len(result.items)
    assert all(it.record is None and "max_seq" in it.failure for it in failed)


def test_run_directory_is_deterministic(tiny, tmp_path):
    cfg = ExperimentConfig("ITA-IT", n_min=3, n_max=4, repetitions=2, master_seed=9,
                           decode=DecodeParams(mode="top-p", temperature=0.5, max_new_tokens=8))
    run_experiment(cfg, model=tiny, out_dir=tmp_path / "a")
    run_experiment(cfg, model=tiny, out_dir=tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["config.json", "cwa.csv", "metrics.csv", "records.jsonl", "verdicts.csv"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def _write(path, rows):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in rows),
                    encoding="utf-8")
    return path


ROW = {"experiment": "ENG-IT", "template_id": "a", "language": "EN", "n_target": 3,
       "repetition": 0}


def test_ingest_examples(tmp_path):
    path = _write(tmp_path / "t.jsonl", [dict(ROW, text="The dog runs"),
                                         dict(ROW, text="The dog .", repetition=1)])
    result = ingest_transcripts(path, tmp_path / "out")
    assert [r["error"] for r in result.rows] == [0, -1]
    assert result.outcomes == [Outcome.SUCCESS, Outcome.TOO_SHORT]
    assert result.mae == {"ENG-IT": 0.5} and not result.problems
    assert (tmp_path / "out" / "metrics.csv").exists()


def test_ingest_malformed_rows_and_empty(tmp_path):
    path = _write(tmp_path / "t.jsonl", [dict(ROW, text="The dog runs"), "{not json",
                                         dict(ROW, text="x", n_target=-1),
                                         {k: v for k, v in ROW.items() if k != "language"}])
    result = ingest_transcripts(path)
    assert len(result.rows) == 1 and len(result.problems) == 3
    assert [p.split(":")[1] for p in result.problems] == ["2", "3", "4"]
    empty = tmp_path / "empty.jsonl"
    empty.write_text("\n")
    with pytest.raises(DomainError):
        ingest_transcripts(empty)
