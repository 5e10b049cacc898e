"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 data error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from .embedder import EmbedderConfig
from .evaluation import EvalMatrix, evaluate_run
from .events import DEFAULT_KEEP, ParseError, filter_sensors, partition_weeks, read_casas, write_casas
from .oracle import AnnotationOracle
from .orchestrator import BootstrapError, PipelineConfig, Schedule, bootstrap, run_update_cycle
from .report import FORMATS, render_report
from .rundir import (RunDirError, casas_source, completed_cycles, cycle_dir, load_source, load_state, next_block,
                     read_manifest, save_cycle, synth_source, write_manifest)
from .ssl import SSLConfig
from .synth import SynthConfig, default_home, synth_generate

logger = logging.getLogger("harupdate")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _keep(text: str) -> set[str]:
    return {s.strip() for s in text.split(",") if s.strip()}


def _synth_config(arg: str, days: int | None) -> SynthConfig:
    if arg == "default":
        return default_home(days or 56)
    cfg = SynthConfig.from_json(Path(arg).read_text())
    return replace(cfg, days=days) if days else cfg


def cmd_ingest(args) -> int:
    stream = filter_sensors(read_casas(args.input), _keep(args.keep_sensors))
    blocks = partition_weeks(stream, args.block_weeks)
    doc = {"summary": json.loads(stream.summary.to_json()), "diagnostics": len(stream.diagnostics),
           "blocks": [{"index": b.index, "start": str(b.start_date), "end": str(b.end_date),
                       "events": len(b), "partial": b.partial} for b in blocks]}
    print(json.dumps(doc, indent=1))
    return EXIT_OK


def cmd_synth(args) -> int:
    stream = synth_generate(_synth_config(args.synth_config, args.days), args.seed)
    write_casas(stream, args.out)
    print(stream.summary.to_json())
    return EXIT_OK


def _pipeline_config(args) -> PipelineConfig:
    emb = EmbedderConfig(epochs=args.embedder_epochs) if args.embedder_epochs is not None else EmbedderConfig()
    ssl = SSLConfig()
    if args.pretrain_epochs is not None:
        ssl = replace(ssl, pretrain_epochs=args.pretrain_epochs)
    if args.finetune_epochs is not None:
        ssl = replace(ssl, finetune_epochs=args.finetune_epochs)
    if args.theta is not None:
        ssl = replace(ssl, threshold=args.theta)
    if args.freeze_encoder:
        ssl = replace(ssl, freeze_encoder=True)
    return PipelineConfig(schedule=Schedule(args.n, args.m, args.update_weeks), k=args.k, auto_k=args.auto_k,
                          seed=args.seed, seed_origin=args.seed_origin, warm_start=args.warm_start,
                          refresh_au=args.refresh_au, embedder=emb, ssl=ssl)


def start_run(run_dir, config: PipelineConfig, source: dict, keep) -> None:
    run_dir = Path(run_dir)
    if completed_cycles(run_dir) >= 0:
        raise UsageError(f"{run_dir} already holds a run")
    run_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(run_dir, config, source, keep)
    stream = load_source(source, keep)
    oracle = AnnotationOracle.from_stream(stream)
    state = bootstrap(stream, None, oracle, config)
    if state.config != config:   # auto-k resolved
        write_manifest(run_dir, state.config, source, keep)
    save_cycle(run_dir, state)
    logger.info("bootstrap done: %d motifs, budget %d", len(state.memory), len(state.budget))


def continue_run(run_dir, cycles: int | None) -> int:
    """Run up to ``cycles`` more update cycles (all remaining when None); returns how many ran."""
    state, stream, oracle = load_state(run_dir)
    done = 0
    while cycles is None or done < cycles:
        blk = next_block(state, stream)
        if blk is None:
            break
        run_update_cycle(state, blk, oracle)
        save_cycle(run_dir, state)
        done += 1
    return done


def cmd_bootstrap(args) -> int:
    if bool(args.input) == bool(args.synth_config):
        raise UsageError("give exactly one of --input or --synth-config")
    source = casas_source(args.input) if args.input else synth_source(
        _synth_config(args.synth_config, args.days), args.synth_seed)
    start_run(args.run_dir, _pipeline_config(args), source, _keep(args.keep_sensors))
    print(cycle_dir(args.run_dir, 0))
    return EXIT_OK


def cmd_update(args) -> int:
    n = continue_run(args.run_dir, None if args.cycles == "all" else int(args.cycles))
    print(f"{n} cycle(s) run; cursor at {completed_cycles(args.run_dir)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    matrix = evaluate_run(args.run_dir, args.max_blocks)
    out = Path(args.out) if args.out else Path(args.run_dir) / "eval.json"
    out.write_text(matrix.to_json() + "\n")
    print(render_report(matrix, "markdown"))
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.matrix) if args.matrix else Path(args.run_dir) / "eval.json"
    if not path.exists():
        raise RunDirError(f"no evaluation matrix at {path}; run `evaluate` first")
    matrix = EvalMatrix.from_dict(json.loads(path.read_text()))
    text = render_report(matrix, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def replay(manifest_path, out_dir) -> list[str]:
    """Re-run a recorded run into ``out_dir``; returns the segment files that differ."""
    man = read_manifest(manifest_path)
    src_dir = Path(manifest_path)
    src_dir = src_dir if src_dir.is_dir() else src_dir.parent
    cycles = completed_cycles(src_dir)
    config = PipelineConfig.from_dict(man["config"])
    start_run(out_dir, config, man["source"], set(man["keep_sensors"]))
    if cycles > 0:
        continue_run(out_dir, cycles)
    diffs = []
    for c in range(max(cycles, 0) + 1):
        a = cycle_dir(src_dir, c) / "segments.jsonl"
        b = cycle_dir(out_dir, c) / "segments.jsonl"
        if not b.exists() or a.read_bytes() != b.read_bytes():
            diffs.append(str(a))
    return diffs


def cmd_replay(args) -> int:
    out = args.out
    tmp = None
    if out is None:
        tmp = tempfile.mkdtemp(prefix="harupdate-replay-")
        out = tmp
    try:
        diffs = replay(args.manifest, out)
    finally:
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)
    if diffs:
        print("replay differs: " + ", ".join(diffs), file=sys.stderr)
        return EXIT_INVARIANT
    print("replay identical")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="harupdate", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="parse a CASAS log and print its summary")
    s.add_argument("--input", required=True)
    s.add_argument("--keep-sensors", default=",".join(sorted(DEFAULT_KEEP)))
    s.add_argument("--block-weeks", type=int, default=2)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="write a synthetic CASAS log")
    s.add_argument("--synth-config", default="default", help="JSON file or 'default'")
    s.add_argument("--days", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("bootstrap", help="start a run: cold and warm phases")
    s.add_argument("--input")
    s.add_argument("--synth-config", help="JSON file or 'default'")
    s.add_argument("--days", type=int)
    s.add_argument("--synth-seed", type=int, default=0)
    s.add_argument("--run-dir", required=True)
    s.add_argument("--keep-sensors", default=",".join(sorted(DEFAULT_KEEP)))
    s.add_argument("--n", type=int, default=2)
    s.add_argument("--m", type=int, default=2)
    s.add_argument("--update-weeks", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--k", type=int, default=24)
    s.add_argument("--auto-k", action="store_true")
    s.add_argument("--seed-origin", choices=["motif", "all"], default="motif")
    s.add_argument("--warm-start", action="store_true")
    s.add_argument("--refresh-au", action="store_true")
    s.add_argument("--theta", type=float)
    s.add_argument("--freeze-encoder", action="store_true", help="fine-tune the classifier head only")
    s.add_argument("--embedder-epochs", type=int)
    s.add_argument("--pretrain-epochs", type=int)
    s.add_argument("--finetune-epochs", type=int)
    s.set_defaults(func=cmd_bootstrap)

    s = sub.add_parser("update", help="run update cycles on the next blocks")
    s.add_argument("--run-dir", required=True)
    s.add_argument("--cycles", default="all", help="number of cycles or 'all'")
    s.set_defaults(func=cmd_update)

    s = sub.add_parser("evaluate", help="evaluate every model on later test blocks")
    s.add_argument("--run-dir", required=True)
    s.add_argument("--max-blocks", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="render an evaluation matrix")
    s.add_argument("--run-dir")
    s.add_argument("--matrix")
    s.add_argument("--format", choices=FORMATS, default="markdown")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("replay", help="re-run from a manifest and compare segment files")
    s.add_argument("manifest")
    s.add_argument("--out")
    s.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "update" and args.cycles != "all" and not args.cycles.isdigit():
            raise UsageError("--cycles takes a number or 'all'")
        if args.command == "report" and not (args.run_dir or args.matrix):
            raise UsageError("report needs --run-dir or --matrix")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"harupdate: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:
        print(f"harupdate: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ParseError, RunDirError, BootstrapError, FileNotFoundError, ValueError) as exc:
        print(f"harupdate: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
