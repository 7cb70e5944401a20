"""Command-line entry point: ``zoomeye ask|bench|sweep|gen-scenes|render-trace``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from types import SimpleNamespace

from zoomeye.cues import CuePromptSet, VisualCue
from zoomeye.errors import TransportError, ZoomEyeError
from zoomeye.geometry import BBox
from zoomeye.harness.bench import run_bench, shared_backend_factory, sim_backend_factory
from zoomeye.harness.scenes import SceneParams, generate_scenes
from zoomeye.harness.sweep import scaling_sweep
from zoomeye.oracle.remote import RemoteBackend, RemoteConfig
from zoomeye.oracle.simulated import SceneSpec, SimulatedBackend
from zoomeye.search import SearchAborted, SearchConfig, answer_question
from zoomeye.visual import InputMode, load_image, render_trace, save_png

log = logging.getLogger("zoomeye")

EXIT_ERROR = 1
EXIT_BACKEND = 2


class UsageError(ZoomEyeError):
    pass


def _csv(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON file with 'search' and 'remote' sections")
    p.add_argument("--backend", choices=["sim", "remote"], default=None)
    p.add_argument("--mode", choices=[m.value for m in InputMode], default=None)
    p.add_argument("--tau", type=float)
    p.add_argument("--tau2", type=float)
    p.add_argument("--bias", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--weights", choices=["prose", "alg2-literal"], help="depth-weight convention")
    p.add_argument("--cues", help="comma-separated cues; skips cue generation")
    p.add_argument("--profile", default="vstar", help="built-in cue examples: vstar or hrbench")
    p.add_argument("--icl", type=Path, help="JSON file with custom cue examples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", type=int)
    p.add_argument("--trace", type=Path, help="write the search trace JSON here")
    p.add_argument("--render", type=Path, help="write a PNG overlay of visited patches here")
    p.add_argument("--endpoint", help="remote chat-completions URL (else $ZOOMEYE_ENDPOINT)")
    p.add_argument("--model", help="remote model name (else $ZOOMEYE_MODEL)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="zoomeye", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    ask = sub.add_parser("ask", parents=[common], help="answer one question about one image")
    ask.add_argument("image", type=Path)
    ask.add_argument("question")
    ask.add_argument("--options", help="comma-separated answer options, lettered A, B, ...")
    ask.add_argument("--scene", type=Path, help="scene JSON for the simulated backend")

    bench = sub.add_parser("bench", parents=[common], help="run and score a JSON-lines dataset")
    bench.add_argument("dataset", type=Path)
    bench.add_argument("--out", type=Path, required=True)
    bench.add_argument("--epsilon", type=float, help="override scene noise for the simulated backend")
    bench.add_argument("--always-no", action="store_true", help="simulated backend that never perceives anything")
    bench.add_argument("--max-steps", type=int)
    bench.add_argument("--timing", action="store_true", help="include wall time in traces (breaks byte-determinism)")

    sweep = sub.add_parser("sweep", parents=[common], help="accuracy versus search budget")
    sweep.add_argument("dataset", type=Path)
    sweep.add_argument("--out", type=Path, required=True)
    group = sweep.add_mutually_exclusive_group(required=True)
    group.add_argument("--budgets", help="comma-separated max-step budgets")
    group.add_argument("--taus", help="comma-separated answering thresholds")
    sweep.add_argument("--epsilon", type=float)
    sweep.add_argument("--cache", type=Path, help="sqlite confidence cache (default: OUT/confidence_cache.sqlite)")

    gen = sub.add_parser("gen-scenes", parents=[common], help="write synthetic scenes and a dataset")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--count", type=int, default=10)
    gen.add_argument("--width", type=int, default=1536)
    gen.add_argument("--height", type=int, default=1536)
    gen.add_argument("--targets", type=int, default=3)
    gen.add_argument("--min-size", type=float, default=0.018)
    gen.add_argument("--max-size", type=float, default=0.06)
    gen.add_argument("--rho", type=float, default=0.005)
    gen.add_argument("--epsilon", type=float, default=0.0)
    gen.add_argument("--grids", default="2", help="grids every target must be reachable under, e.g. 2,3,4")
    gen.add_argument("--instances", type=int, default=1, help=">1 makes counting scenes")

    rt = sub.add_parser("render-trace", parents=[common], help="draw a saved trace over its image")
    rt.add_argument("image", type=Path)
    rt.add_argument("trace_file", type=Path)
    rt.add_argument("--out", type=Path, required=True)
    return parser


def load_settings(args: argparse.Namespace) -> SimpleNamespace:
    """Merge mode presets, the config file and command-line flags (later wins)."""
    file_cfg: dict = {}
    if args.config is not None:
        try:
            file_cfg = json.loads(args.config.read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    search = dict(file_cfg.get("search", {}))
    mode = args.mode or search.pop("mode", InputMode.GLOBAL_LOCAL.value)
    search.pop("mode", None)
    flags = {
        "tau": args.tau,
        "tau2": args.tau2,
        "bias": args.bias,
        "grid": args.grid,
        "parallel": args.parallel,
        "weight_convention": args.weights,
        "max_steps": getattr(args, "max_steps", None),
    }
    search.update({k: v for k, v in flags.items() if v is not None})
    try:
        config = SearchConfig.for_mode(mode, **search)
    except TypeError as exc:
        raise UsageError(f"bad search config: {exc}") from exc
    backend = args.backend or file_cfg.get("backend", "sim")
    remote = dict(file_cfg.get("remote", {}))
    return SimpleNamespace(config=config, backend=backend, remote=remote)


def make_remote(args: argparse.Namespace, remote: dict) -> RemoteBackend:
    overrides = {**remote, "endpoint": args.endpoint or remote.get("endpoint"), "model": args.model or remote.get("model")}
    return RemoteBackend(RemoteConfig.from_env(**overrides))


def prompt_set(args: argparse.Namespace) -> CuePromptSet:
    if args.icl is not None:
        return CuePromptSet.load(args.icl)
    return CuePromptSet.builtin(args.profile)


def cmd_ask(args: argparse.Namespace) -> int:
    settings = load_settings(args)
    try:
        image = load_image(args.image)
    except OSError as exc:
        raise UsageError(f"cannot read image {args.image}: {exc}") from exc
    if settings.backend == "sim":
        if args.scene is None:
            raise UsageError("--backend sim needs --scene")
        backend = SimulatedBackend(SceneSpec.load(args.scene))
    else:
        backend = make_remote(args, settings.remote)
    question = args.question
    if args.options:
        opts = _csv(args.options)
        question = "\n".join([question] + [f"{chr(65 + i)}. {o}" for i, o in enumerate(opts)])
    cues = [VisualCue.of(c) for c in _csv(args.cues)] if args.cues else None
    result = answer_question(
        image, question, settings.config, backend,
        cues=cues, prompt_set=prompt_set(args), source=str(args.image), cue_question=args.question,
    )
    print(result.answer)
    if args.trace is not None:
        args.trace.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.render is not None:
        steps = [s for t in result.traces for s in t.steps]
        save_png(render_trace(image, steps), args.render)
    return 0


def _bench_factory(args: argparse.Namespace, settings: SimpleNamespace):
    if settings.backend == "sim":
        return sim_backend_factory(epsilon=args.epsilon, always_no=getattr(args, "always_no", False))
    return shared_backend_factory(make_remote(args, settings.remote))


def cmd_bench(args: argparse.Namespace) -> int:
    settings = load_settings(args)
    run = run_bench(
        args.dataset,
        settings.config,
        _bench_factory(args, settings),
        out_dir=args.out,
        parallel=settings.config.parallel,
        prompt_set=prompt_set(args),
        cues=_csv(args.cues) if args.cues else None,
        timing=args.timing,
    )
    print(run.report.summary())
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = load_settings(args)
    budgets = [int(v) for v in _csv(args.budgets)] if args.budgets else None
    taus = [float(v) for v in _csv(args.taus)] if args.taus else None
    points = scaling_sweep(
        args.dataset,
        settings.config,
        _bench_factory(args, settings),
        budgets=budgets,
        taus=taus,
        out_dir=args.out,
        cache_path=args.cache,
        parallel=settings.config.parallel,
    )
    for p in points:
        print(f"{p.setting}={p.value:g}\tsteps={p.mean_steps:.2f}\taccuracy={p.accuracy:.2f}%")
    return 0


def cmd_gen_scenes(args: argparse.Namespace) -> int:
    params = SceneParams(
        width=args.width,
        height=args.height,
        targets=args.targets,
        min_size=args.min_size,
        max_size=args.max_size,
        rho=args.rho,
        epsilon=args.epsilon,
        grids=tuple(int(g) for g in _csv(args.grids)),
        instances=args.instances,
    )
    path = generate_scenes(args.seed, args.count, args.out, params)
    print(path)
    return 0


class _Step(SimpleNamespace):
    pass


def cmd_render_trace(args: argparse.Namespace) -> int:
    try:
        image = load_image(args.image)
        doc = json.loads(args.trace_file.read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read inputs: {exc}") from exc
    traces = doc.get("traces", [doc])
    steps = [
        _Step(step=s["step"], depth=s["depth"], bbox=BBox.from_sequence(s["bbox"]))
        for t in traces
        for s in t.get("steps", [])
    ]
    save_png(render_trace(image, steps), args.out)
    return 0


COMMANDS = {
    "ask": cmd_ask,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "gen-scenes": cmd_gen_scenes,
    "render-trace": cmd_render_trace,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except TransportError as exc:
        print(f"error: backend transport failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except SearchAborted as exc:
        if isinstance(exc.__cause__, TransportError):
            print(f"error: backend transport failure: {exc}", file=sys.stderr)
            return EXIT_BACKEND
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ZoomEyeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
