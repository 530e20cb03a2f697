"""Desk-scale version of the full study: four experiments on seeded toy models.

IT-tagged experiments use an EOS-rigged model (a bias along the EOS
unembedding in one MLP), BASE-tagged ones the plain reference model, so the
two variants differ in when they stop. Writes run directories plus CSV and
SVG reports under --out.

    python3 scripts/desk_experiment.py --out desk --reps 5
"""
from __future__ import annotations

import argparse
import logging
import time
from pathlib import Path

from cwa.harness import EXPERIMENTS, ExperimentConfig, run_experiment
from cwa.model import DecodeParams
from cwa.model_io import RigSpec, make_reference_model, make_rigged_model, save
from cwa.report import aggregate, emit_csv, emit_svg
from cwa.tokenizer import EOS_ID


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("desk_run"))
    ap.add_argument("--seed", type=int, default=0, help="model and master seed")
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--n-min", type=int, default=3)
    ap.add_argument("--n-max", type=int, default=9)
    ap.add_argument("--rig-layer", type=int, default=2)
    ap.add_argument("--rig-scale", type=float, default=0.2)
    ap.add_argument("--temperature", type=float, default=0.3)
    ap.add_argument("--max-new-tokens", type=int, default=32)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)

    weights, cfg, vocab = make_reference_model(args.seed)
    rigged = make_rigged_model(weights, cfg, RigSpec(args.rig_layer, "token", EOS_ID,
                                                     args.rig_scale))
    args.out.mkdir(parents=True, exist_ok=True)
    save(weights, cfg, vocab, args.out / "base.cwam")
    save(rigged, cfg, vocab, args.out / "it.cwam")
    decode = DecodeParams(mode="top-p", temperature=args.temperature, top_p=0.9,
                          max_new_tokens=args.max_new_tokens)
    runs = []
    for tag in EXPERIMENTS:
        is_it = tag.endswith("-IT")
        config = ExperimentConfig(tag, model_path="it.cwam" if is_it else "base.cwam",
                                  n_min=args.n_min, n_max=args.n_max, repetitions=args.reps,
                                  decode=decode, master_seed=args.seed)
        start = time.perf_counter()
        result = run_experiment(config, model=(rigged if is_it else weights, cfg, vocab),
                                out_dir=args.out / tag)
        mae = "n/a" if result.mae is None else f"{result.mae:.3f}"
        print(f"{tag}: {len(result.items)} generations, MAE {mae}, "
              f"{time.perf_counter() - start:.1f}s")
        runs.append(args.out / tag)
    agg = aggregate(runs, n_min=args.n_min, n_max=args.n_max, panel=None, include_truncated=True)
    for path in emit_csv(agg, args.out / "report") + emit_svg(agg, args.out / "report"):
        print(path)


if __name__ == "__main__":
    main()
