"""Command-line interface.

Exit codes: 0 success, 1 data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from .errors import CwaError
from .harness import EXPERIMENTS, MATCH_MODES, ExperimentConfig, ingest_transcripts, run_experiment
from .model import DecodeParams, ModelConfig

log = logging.getLogger("cwa")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _templates_arg(value: str) -> tuple[tuple[str, ...] | None, tuple[str, ...] | None]:
    """``auto``, ``IT``, ``BASE`` or ``both``, optionally ``:a,c`` to pick ids."""
    sets, _, ids = value.partition(":")
    sets = sets.strip()
    choice = {"auto": None, "IT": ("IT",), "BASE": ("BASE",), "both": ("IT", "BASE")}
    if sets not in choice:
        raise argparse.ArgumentTypeError(f"template set must be auto, IT, BASE or both, got {sets!r}")
    id_tuple = None
    if ids:
        id_tuple = tuple(sorted(i.strip() for i in ids.split(",") if i.strip()))
        bad = [i for i in id_tuple if i not in ("a", "b", "c", "d")]
        if bad:
            raise argparse.ArgumentTypeError(f"unknown template ids {bad}")
    return choice[sets], id_tuple


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cwa", description="Word-count control analysis with DLA/CWA.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--version", action="version", version=f"cwa {name} {_version()}")
        return p

    p = add("make-model", "Write a seeded reference model file.")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--dmodel", type=int, default=64)
    p.add_argument("--dff", type=int, default=128)
    p.add_argument("--max-seq", type=int, default=128)
    p.add_argument("--vocab-extra", type=Path, default=None,
                   help="extra subword file (one hex-escaped token per line)")
    p.add_argument("--rig-layer", type=int, default=None,
                   help="inject an EOS-aligned down-projection bias at this layer")
    p.add_argument("--rig-scale", type=float, default=0.0)
    p.add_argument("--out", type=Path, required=True)

    p = add("run", "Generate, judge and attribute one experiment.")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--experiment", required=True, help="/".join(EXPERIMENTS))
    p.add_argument("--templates", type=_templates_arg, default=(None, None),
                   help="auto | IT | BASE | both, optionally followed by :a,b,...")
    p.add_argument("--match-mode", choices=MATCH_MODES, default="all")
    p.add_argument("--n-min", type=int, default=0)
    p.add_argument("--n-max", type=int, default=9)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--decode", choices=("greedy", "top-p"), default="greedy")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--top-p", type=float, default=0.9)
    p.add_argument("--max-new-tokens", type=int, default=32)
    p.add_argument("--formula-eos", action="store_true",
                   help="sign EOS steps with the plain m <= N rule")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = add("ingest", "Score external transcripts (JSON lines) by word count.")
    p.add_argument("--transcripts", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = add("report", "Aggregate run directories into CSV or SVG reports.")
    p.add_argument("--runs", type=Path, nargs="+", required=True)
    p.add_argument("--format", choices=("csv", "svg"), default="csv")
    p.add_argument("--n-min", type=int, default=3)
    p.add_argument("--n-max", type=int, default=9)
    p.add_argument("--panel", choices=("matched", "mismatched", "mixed", "all"), default="matched")
    p.add_argument("--include-truncated", action="store_true")
    p.add_argument("--exclude-outliers", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", type=Path, required=True)

    add("selftest", "Run the built-in invariant checks.")
    return parser


def _cmd_make_model(args) -> int:
    from .model_io import RigSpec, make_reference_model, make_rigged_model, save
    from .tokenizer import Vocabulary, fixture_subwords, unescape_token

    subwords = fixture_subwords()
    if args.vocab_extra is not None:
        lines = args.vocab_extra.read_text(encoding="utf-8").splitlines()
        subwords += [unescape_token(line) for line in lines if line]
    vocab = Vocabulary.from_subwords(subwords)
    cfg = ModelConfig(n_layers=args.layers, n_heads=args.heads, d_model=args.dmodel,
                      d_ff=args.dff, vocab_size=vocab.size, max_seq=args.max_seq)
    weights, cfg, vocab = make_reference_model(args.seed, cfg, vocab)
    if args.rig_layer is not None:
        weights = make_rigged_model(weights, cfg, RigSpec(args.rig_layer, "token", vocab.eos,
                                                          args.rig_scale))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save(weights, cfg, vocab, args.out)
    print(f"wrote {args.out} (V={cfg.vocab_size}, L={cfg.n_layers}, H={cfg.n_heads}, "
          f"d_model={cfg.d_model})")
    return EXIT_OK


def _cmd_run(args) -> int:
    if args.experiment not in EXPERIMENTS:
        print(f"cwa run: unknown experiment {args.experiment!r}; expected one of "
              f"{', '.join(EXPERIMENTS)}", file=sys.stderr)
        return EXIT_USAGE
    sets, ids = args.templates
    try:
        decode = DecodeParams(mode=args.decode, temperature=args.temperature, top_p=args.top_p,
                              max_new_tokens=args.max_new_tokens)
        config = ExperimentConfig(
            experiment=args.experiment, model_path=str(args.model), template_sets=sets,
            template_ids=ids, match_mode=args.match_mode, n_min=args.n_min, n_max=args.n_max,
            repetitions=args.reps, decode=decode, master_seed=args.seed,
            eos_rule=not args.formula_eos)
    except CwaError as exc:
        print(f"cwa run: {exc}", file=sys.stderr)
        return EXIT_USAGE
    result = run_experiment(config, out_dir=args.out)
    failed = sum(it.failure is not None for it in result.items)
    print(f"{len(result.items)} generations written to {args.out}"
          + (f" ({failed} skipped)" if failed else ""))
    if result.mae is not None:
        print(f"MAE {result.mae:.4f}  mean error {result.stats.avg:.4f}")
    return EXIT_DATA if failed == len(result.items) else EXIT_OK


def _cmd_ingest(args) -> int:
    result = ingest_transcripts(args.transcripts, args.out)
    for problem in result.problems:
        print(problem, file=sys.stderr)
    for exp, value in result.mae.items():
        n_rows = sum(r["experiment"] == exp for r in result.rows)
        print(f"{exp}: {n_rows} rows, MAE {value:.4f}  mean error {result.stats[exp].avg:.4f}")
    if result.problems:
        print(f"{len(result.problems)} malformed rows skipped", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _cmd_report(args) -> int:
    from .report import aggregate, emit_csv, emit_svg
    agg = aggregate(args.runs, n_min=args.n_min, n_max=args.n_max,
                    panel=None if args.panel == "all" else args.panel,
                    include_truncated=args.include_truncated,
                    exclude_outliers=args.exclude_outliers)
    written = (emit_csv if args.format == "csv" else emit_svg)(agg, args.out)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_selftest(args) -> int:
    from .selftest import run_all
    ok = True
    for name, passed, detail in run_all():
        print(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")
        ok &= passed
    return EXIT_OK if ok else EXIT_DATA


COMMANDS = {"make-model": _cmd_make_model, "run": _cmd_run, "ingest": _cmd_ingest,
            "report": _cmd_report, "selftest": _cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (CwaError, OSError) as exc:
        print(f"cwa {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
