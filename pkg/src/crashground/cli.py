"""``crashground`` command line: run, score, diagnose, sweep, ablate, mock-serve.

Exit status is 0 on success, 1 when inputs or configuration are invalid and
2 when work fails at runtime. Errors are printed to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import diagnostics as diag
from .config import RunConfig, load_config_file, resolve_config
from .evaluator import (
    bootstrap_ci,
    dataset_summary,
    paired_bootstrap,
    read_ground_truth,
    read_predictions,
    score_all,
)
from .gateway import VLMGateway, grounding_profile, typing_profile
from .pipeline import load_traces, make_fallback, read_manifest, run_batch
from .types import (
    ConfigError,
    CrashGroundError,
    InvalidInputError,
    JoinError,
    ParseError,
    Prediction,
    TraceError,
)

log = logging.getLogger("crashground")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit(2); usage problems are validation errors
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_gate_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (overrides defaults)")
    p.add_argument("--tau", type=float, help="temporal boundary tolerance, seconds")
    p.add_argument("--margin", type=float, help="spatial margin on the 0-1000 grid")
    p.add_argument("--sigma-t", type=float, help="temporal Gaussian sigma, seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crashground", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="ground every video in a manifest")
    p.add_argument("--manifest", required=True, help="CSV video_id,path,duration,width,height")
    p.add_argument("--out", required=True, help="output directory")
    _add_gate_flags(p)
    p.add_argument("--window-delta", type=float)
    p.add_argument("--crop-factor", type=float)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--workers", type=int, nargs=3, metavar=("PASS1", "PASS2", "TYPING"))
    p.add_argument("--no-pass2-time", dest="use_pass2_time", action="store_false", default=None)
    p.add_argument("--no-pass2-space", dest="use_pass2_space", action="store_false", default=None)
    p.add_argument("--no-specialist-type", dest="use_specialist_type", action="store_false", default=None)
    p.add_argument("--fallback", choices=["naive", "plugin"])
    p.add_argument("--fallback-cmd", help="plugin command template ({video_id} {path} {duration})")
    p.add_argument("--extractor-cmd", help="frame decoder template ({input} {timestamp} {long_edge} {crop} {vf})")
    p.add_argument("--mock-endpoint", help="send both model roles to this URL")

    p = sub.add_parser("score", help="score a predictions CSV against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--sigma-t", type=float, default=1.0)
    p.add_argument("--sigma-x", type=float, default=0.127)
    p.add_argument("--sigma-y", type=float, default=0.119)
    p.add_argument("--bootstrap", type=int, default=0, metavar="N", help="bootstrap resamples for the CI")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paired", help="second predictions CSV for a paired bootstrap")
    p.add_argument("--json", dest="json_out", help="also write the summary as JSON here")

    p = sub.add_parser("diagnose", help="failure-mode tables")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--traces", help="traces.jsonl (durations and fallback provenance)")
    p.add_argument("--manifest", help="manifest for durations when no traces are given")
    p.add_argument("--oracle-errors", help="CSV video_id,error for a second temporal predictor")
    p.add_argument("--out", help="directory for CSV tables")
    _add_gate_flags(p)

    p = sub.add_parser("sweep", help="re-gate traces over tau and margin grids")
    p.add_argument("--traces", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--tau-grid", type=_floats, default=list(diag.DEFAULT_TAU_GRID))
    p.add_argument("--m-grid", type=_floats, default=list(diag.DEFAULT_M_GRID))
    p.add_argument("--out", help="directory for CSV tables")
    _add_gate_flags(p)

    p = sub.add_parser("ablate", help="component ablation from traces")
    p.add_argument("--traces", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", help="directory for CSV tables")
    _add_gate_flags(p)

    p = sub.add_parser("mock-serve", help="serve scripted model replies")
    p.add_argument("--script", help="JSONL script")
    p.add_argument("--failure-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--port", type=int, default=8099)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--hold-seconds", type=float, default=30.0)

    p = sub.add_parser("synth", help="write a seeded synthetic corpus for demos")
    p.add_argument("--out", required=True)
    p.add_argument("-n", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """defaults < --config file < explicit flags."""
    file_layer = load_config_file(args.config) if getattr(args, "config", None) else {}
    flags: dict[str, Any] = {}
    for attr, key in [
        ("tau", "tau"), ("margin", "margin"), ("sigma_t", "sigma_t"),
        ("window_delta", "window_delta"), ("crop_factor", "crop_factor"),
        ("max_retries", "max_retries"), ("use_pass2_time", "use_pass2_time"),
        ("use_pass2_space", "use_pass2_space"), ("use_specialist_type", "use_specialist_type"),
        ("fallback", "fallback_mode"), ("fallback_cmd", "fallback_cmd"),
        ("extractor_cmd", "extractor_cmd"),
    ]:
        value = getattr(args, attr, None)
        if value is not None:
            flags[key] = value
    if getattr(args, "workers", None):
        flags["workers"] = list(args.workers)
    return resolve_config(file_layer, flags)


def _emit(text: str) -> None:
    sys.stdout.write(text)
    if not text.endswith("\n"):
        sys.stdout.write("\n")


def _maybe_write(out: str | None, name: str, rows) -> None:
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        diag.write_table(Path(out) / f"{name}.csv", rows)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    fallback = make_fallback(cfg)
    videos = read_manifest(args.manifest)
    if args.mock_endpoint:
        gp = grounding_profile(cfg, args.mock_endpoint, os.environ.get("GROUNDING_API_KEY", "mock"))
        tp = typing_profile(cfg, args.mock_endpoint, os.environ.get("TYPING_API_KEY", "mock"))
    else:
        gp, tp = grounding_profile(cfg), typing_profile(cfg)
        for prof, env in ((gp, "GROUNDING_ENDPOINT"), (tp, "TYPING_ENDPOINT")):
            if not prof.endpoint:
                raise ConfigError(f"no endpoint: set {env} or pass --mock-endpoint")
    with VLMGateway(gp, tp) as gateway:
        gateway.check_credentials()
        result = run_batch(videos, cfg, gateway, fallback, args.out)
    r = result.report
    _emit(
        f"grounded {r['n_videos']} videos ({r['n_resumed']} resumed) -> {result.predictions_path}\n"
        f"pass1 failures {r['pass1']['failed']}/{r['pass1']['attempted']}, "
        f"pass2 failures {r['pass2']['failed']}/{r['pass2']['attempted']}, "
        f"typing failures {r['typing']['failed']}/{r['typing']['attempted']}, "
        f"fallback {r['fallback']['count']}"
    )
    return 0


def _summary_text(s: dict[str, Any], title: str) -> str:
    return diag.format_table([{"n": s["n"], "T": s["mean_T"], "S": s["mean_S"], "C": s["mean_C"],
                               "ACC_S": s["ACC_S"]}], title)


def cmd_score(args) -> int:
    gts = read_ground_truth(args.gt)
    preds = read_predictions(args.pred)
    sig = (args.sigma_t, args.sigma_x, args.sigma_y)
    rows = score_all(preds, gts, *sig)
    summary = dataset_summary(rows)
    cfg = RunConfig(sigma_t=args.sigma_t, sigma_x=args.sigma_x, sigma_y=args.sigma_y)
    out: dict[str, Any] = {"summary": summary, "per_type": diag.per_type_table(preds, gts, cfg)}
    text = _summary_text(summary, f"summary (sigma_t={args.sigma_t:g})")
    if args.bootstrap:
        lo, hi = bootstrap_ci(rows, args.bootstrap, 0.95, args.seed)
        out["ci95"] = [lo, hi]
        text += f"ACC_S 95% CI [{lo:.4f}, {hi:.4f}] ({args.bootstrap} resamples, seed {args.seed})\n"
    if args.paired:
        other = score_all(read_predictions(args.paired), gts, *sig)
        pb = paired_bootstrap(rows, other, args.bootstrap or 1000, args.seed)
        out["paired"] = pb
        text += (f"paired vs {args.paired}: delta {pb['delta_mean']:+.4f} "
                 f"[{pb['ci_lo']:+.4f}, {pb['ci_hi']:+.4f}], p={pb['p_two_sided']:.4g}\n")
    text += diag.format_table(out["per_type"], "per type")
    _emit(text)
    _emit(json.dumps(out, sort_keys=True))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def _trace_predictions(traces) -> dict[str, Prediction]:
    return {k: Prediction.from_dict(t["prediction"]) for k, t in traces.items() if "prediction" in t}


def cmd_diagnose(args) -> int:
    cfg = config_from_args(args)
    gts = read_ground_truth(args.gt)
    preds = read_predictions(args.pred)
    traces = load_traces(args.traces) if args.traces else None
    durations: dict[str, float] | None = None
    if traces is not None:
        durations = {k: float(t["duration"]) for k, t in traces.items()}
    elif args.manifest:
        durations = {v.video_id: v.duration for v in read_manifest(args.manifest)}

    parts = []
    stats = diag.signed_error_stats(preds, gts)
    bins = [b for b in stats["bins"] if b["count"]]
    parts.append(f"signed time error: n={stats['n']} mean={stats['mean']:+.3f}s median={stats['median']:+.3f}s\n")
    parts.append(diag.format_table(bins, "error histogram (non-empty bins)"))
    _maybe_write(args.out, "signed_error_hist", stats["bins"])

    if durations is not None:
        mae = diag.mae_by_duration(preds, gts, durations)
        parts.append(diag.format_table(mae, "temporal MAE by duration"))
        _maybe_write(args.out, "mae_by_duration", mae)

    cm = diag.confusion_matrix(preds, gts)
    cm_rows = [{"gt": lab, **{p: v for p, v in zip(cm["labels"], row)}}
               for lab, row in zip(cm["labels"], cm["normalized"])]
    cm_counts = [{"gt": lab, **{p: v for p, v in zip(cm["labels"], row)}}
                 for lab, row in zip(cm["labels"], cm["counts"])]
    parts.append(diag.format_table(cm_rows, "type confusion (rows: ground truth, row-normalized)"))
    _maybe_write(args.out, "confusion_normalized", cm_rows)
    _maybe_write(args.out, "confusion_counts", cm_counts)

    per_type = diag.per_type_table(preds, gts, cfg)
    parts.append(diag.format_table(per_type, "per type"))
    _maybe_write(args.out, "per_type", per_type)

    if args.oracle_errors:
        errs_b = diag.read_error_series(args.oracle_errors)
        errs_a = diag.signed_errors(preds, gts)
        common = sorted(set(errs_a) & set(errs_b))
        o = diag.oracle_mae({k: errs_a[k] for k in common}, {k: errs_b[k] for k in common})
        parts.append(diag.format_table([o], "oracle of this run (a) and the supplied series (b)"))
        _maybe_write(args.out, "oracle", [o])

    if traces is not None:
        with_prov = _trace_predictions(traces)
        csv_ids = {p.video_id for p in preds}
        if set(with_prov) >= csv_ids:
            merged = [Prediction(p.video_id, p.t_star, p.x_star, p.y_star, p.c_star,
                                 with_prov[p.video_id].provenance) for p in preds]
            decomp = diag.fallback_decomposition(merged, gts, durations, cfg)
            parts.append(diag.format_table(decomp, "fallback decomposition"))
            _maybe_write(args.out, "fallback_decomposition", decomp)
    _emit("\n".join(parts))
    return 0


def cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    gts = read_ground_truth(args.gt)
    traces = load_traces(args.traces)
    tables = diag.sweep_gates(traces, gts, args.tau_grid, args.m_grid, cfg)
    _emit(diag.format_table(tables["tau"], f"tau sweep (m={cfg.margin:g})")
          + diag.format_table(tables["m"], f"margin sweep (tau={cfg.tau:g})"))
    _maybe_write(args.out, "sweep_tau", tables["tau"])
    _maybe_write(args.out, "sweep_m", tables["m"])
    return 0


def cmd_ablate(args) -> int:
    cfg = config_from_args(args)
    gts = read_ground_truth(args.gt)
    traces = load_traces(args.traces)
    table = diag.ablation_report(traces, gts, cfg)
    _emit(diag.format_table(table, "component ablation"))
    _maybe_write(args.out, "ablation", table)
    return 0


def cmd_mock_serve(args) -> int:
    from .mock_vlm import MockVLMServer

    server = MockVLMServer(args.script, args.failure_rate, args.seed, args.port, args.host, args.hold_seconds)
    _emit(f"mock VLM listening on {server.url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_synth(args) -> int:
    from .synthetic import make_corpus

    corpus = make_corpus(args.out, args.n, args.seed)
    _emit(f"wrote {len(corpus.videos)} videos: {corpus.manifest_path}, {corpus.gt_path}, {corpus.script_path}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "score": cmd_score,
    "diagnose": cmd_diagnose,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "mock-serve": cmd_mock_serve,
    "synth": cmd_synth,
}


def _fail(kind: str, code: int, exc: BaseException) -> int:
    payload: dict[str, Any] = {"error": kind, "message": str(exc)}
    vid = getattr(exc, "video_id", None)
    if vid is not None:
        payload["video_id"] = vid
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", 1, exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help()
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("httpx").setLevel(logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (TraceError,) as exc:
        return _fail("trace", 2, exc)
    except (UsageError, ConfigError, InvalidInputError, JoinError, ParseError) as exc:
        return _fail("validation", 1, exc)
    except FileNotFoundError as exc:
        return _fail("validation", 1, exc)
    except (CrashGroundError, OSError) as exc:
        return _fail("runtime", 2, exc)


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
