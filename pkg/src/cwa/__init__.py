"""Word-count control analysis: instrumented transformer, DLA/CWA attribution and reporting."""
from .attribution import ComponentId, CwaReport, cwa, dla_record, dla_step
from .harness import ExperimentConfig, build_prompts, ingest_transcripts, run_experiment
from .judge import Outcome, judge_generation, judge_tokens, mae
from .model import DecodeParams, ModelConfig, Weights, forward, generate
from .model_io import load, make_reference_model, make_rigged_model, save
from .tokenizer import Vocabulary, count_words, decode, default_vocab, encode

__all__ = [
    "ComponentId", "CwaReport", "cwa", "dla_record", "dla_step",
    "ExperimentConfig", "build_prompts", "ingest_transcripts", "run_experiment",
    "Outcome", "judge_generation", "judge_tokens", "mae",
    "DecodeParams", "ModelConfig", "Weights", "forward", "generate",
    "load", "make_reference_model", "make_rigged_model", "save",
    "Vocabulary", "count_words", "decode", "default_vocab", "encode",
]
