"""Command line interface.

Subcommands: evaluate (case logs to report records), stream (frame-by-frame
reports over stdin/stdout), fit (rated dataset to a model file), simulate
(closed-loop scenario runs to case logs), heatmap (risk field export).
File-producing paths also render a matplotlib figure next to each output
unless --no-figures is given.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import yaml

from . import figures
from .caselog import parse_case, parse_frame, parse_header, serialize_case
from .config import Config, load_config
from .errors import CaseLogError, FitError, StreamOrderError, ValidationError
from .fitting import cross_validate, load_rated_dataset
from .harness import PLANNERS, builtin_scenarios, generate_scenario, run_closed_loop, scenario_from_mapping
from .modelfile import ModelFile, default_model
from .pipeline import REPORT_SCHEMA, TERMS, EvalParams, evaluate_case
from .safety import HeatmapSpec, grid_to_csv, risk_heatmap
from .streaming import StreamEvaluator

log = logging.getLogger("s2o")


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config path (or $S2O_CONFIG)")
    common.add_argument("--model", default=None, help="model file path")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--strict", action="store_true",
                        help="fail the whole run on the first error instead of per-item records")
    common.add_argument("--output", default=None, help="output path (default stdout / cwd)")
    common.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    ap = argparse.ArgumentParser(prog="s2o", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="score case logs")
    p.add_argument("paths", nargs="+", help="case log files or directories")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stream", parents=[common], help="frame-by-frame reports on stdin")
    p.add_argument("--input", default=None, help="read the case log from a file instead of stdin")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("fit", parents=[common], help="fit a model from a rated dataset")
    p.add_argument("dataset", help="rated dataset path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", parents=[common], help="run closed-loop scenarios")
    p.add_argument("scenarios", nargs="+",
                   help="builtin scenario names, YAML files, or 'all'")
    p.add_argument("--planner", choices=sorted(PLANNERS), default="conservative")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("heatmap", parents=[common], help="export the risk field of one frame")
    p.add_argument("case", help="case log path")
    p.add_argument("--frame", type=int, default=0, help="frame index")
    p.set_defaults(func=cmd_heatmap)
    return ap


def _load_context(args) -> tuple[Config, ModelFile, EvalParams]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.model:
        model = ModelFile.load(args.model)
    elif cfg.model_path:
        model = ModelFile.load(cfg.model_path)
    else:
        model = default_model()
    return cfg, model, cfg.params


def _collect_case_paths(raw_paths) -> list[Path]:
    out: list[Path] = []
    for raw in raw_paths:
        p = Path(raw)
        if p.is_dir():
            out.extend(sorted(p.rglob("*.jsonl")))
        else:
            out.append(p)
    return sorted(set(out))


def _evaluate_path(path: Path, model: ModelFile, params: EvalParams) -> dict:
    case = parse_case(path.read_text(encoding="utf-8"))
    report = evaluate_case(case, model, params, case_id=path.stem)
    return report.to_record()


def _figure_name(out_path: Path, case_id: str) -> Path:
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in case_id)
    return out_path.parent / f"{out_path.stem}_{safe}.png"


def cmd_evaluate(args) -> int:
    cfg, model, params = _load_context(args)
    paths = _collect_case_paths(args.paths)
    if not paths:
        print("no case logs found", file=sys.stderr)
        return 1
    out_path = Path(args.output) if args.output else None
    render = out_path is not None and not args.no_figures

    lines: list[str] = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [(p, pool.submit(_evaluate_path, p, model, params)) for p in paths]
            results = []
            for p, fut in futures:
                try:
                    results.append((p, fut.result(), None))
                except Exception as e:  # noqa: BLE001 - per-case isolation
                    results.append((p, None, e))
    else:
        results = []
        for p in paths:
            try:
                results.append((p, _evaluate_path(p, model, params), None))
            except (OSError, ValueError) as e:
                results.append((p, None, e))

    for p, rec, err in results:
        if err is not None:
            if args.strict:
                print(f"error: {p}: {err}", file=sys.stderr)
                return 1
            lines.append(json.dumps({"schema": REPORT_SCHEMA, "case": str(p), "error": str(err)}))
            continue
        lines.append(json.dumps(rec))
        if render:
            try:
                case = parse_case(p.read_text(encoding="utf-8"))
                report = evaluate_case(case, model, params, case_id=p.stem)
                figures.render_case_summary(case, report, params,
                                            _figure_name(out_path, p.stem))
            except (OSError, ValueError) as e:
                log.warning("figure for %s failed: %s", p, e)

    text = "\n".join(lines) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        out_path.write_text(text, encoding="utf-8")
        log.info("wrote %d report(s) to %s", len(lines), out_path)
    return 0


def cmd_stream(args) -> int:
    _, model, params = _load_context(args)
    source = open(args.input, "r", encoding="utf-8") if args.input else sys.stdin
    sink = open(args.output, "w", encoding="utf-8") if args.output else sys.stdout
    evaluator: Optional[StreamEvaluator] = None
    status = 0
    try:
        # parse JSON inline rather than via iter_records: a generator that
        # raises cannot resume, and one bad line must not end the stream
        for lineno, raw in enumerate(source, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                try:
                    record = json.loads(raw)
                except json.JSONDecodeError as e:
                    raise CaseLogError(f"invalid JSON ({e.msg})", lineno) from None
                if evaluator is None:
                    road, meta, crash = parse_header(record, lineno)
                    evaluator = StreamEvaluator(
                        model, params, road, case_id=meta.scenario_id, crash_flag=crash,
                    )
                    continue
                frame = parse_frame(record, evaluator.road, lineno)
                report = evaluator.push(frame)
                if report is not None:
                    sink.write(json.dumps(report.to_record()) + "\n")
                    sink.flush()
            except (CaseLogError, StreamOrderError, ValidationError) as e:
                if args.strict:
                    print(f"error: line {lineno}: {e}", file=sys.stderr)
                    return 1
                sink.write(json.dumps({"schema": REPORT_SCHEMA, "error": str(e), "line": lineno}) + "\n")
                sink.flush()
    finally:
        if args.input:
            source.close()
        if args.output:
            sink.close()
    return status


def _format_weights_table(model_weights) -> str:
    header = f"{'segment':<10}" + "".join(f"{t:>12}" for t in TERMS) + f"{'offset':>10}"
    rows = [header, "-" * len(header)]
    for name in ("low", "mid", "high"):
        row = getattr(model_weights, name)
        rows.append(
            f"{name:<10}"
            + "".join(f"{row[t]:>12.3f}" for t in TERMS)
            + f"{model_weights.offset:>10.1f}"
        )
    return "\n".join(rows)


def cmd_fit(args) -> int:
    cfg, _, _ = _load_context(args)
    try:
        cases = load_rated_dataset(args.dataset)
        result, fitted = cross_validate(
            cases,
            cv=cfg.cv,
            seed=cfg.seed,
            thresholds=cfg.segment_thresholds,
            robust=cfg.robust_calibration,
            svm_params=cfg.svm,
        )
    except (FitError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    out_path = Path(args.output) if args.output else Path("model.json")
    model = ModelFile(
        calibration=fitted.calibration,
        svm=fitted.svm,
        weights=result.weights,
        thresholds=cfg.segment_thresholds,
    )
    model.save(out_path)

    print(f"cases: {len(cases)}  retained raters: "
          f"{len(fitted.retained_raters) if fitted.retained_raters is not None else 'all'}")
    print(_format_weights_table(result.weights))
    repeats = ", ".join(f"{m:.2f}" for m in result.repeat_maes)
    print(f"train MAE: {result.train_mae:.3f}")
    print(f"validation MAE: {result.val_mae:.3f}  (repeats: {repeats})")
    print(f"model written to {out_path}")
    if not args.no_figures:
        fig = figures.render_fit_summary(result, out_path.with_suffix(".png"))
        print(f"figure written to {fig}")
    return 0


def cmd_simulate(args) -> int:
    cfg, _, _ = _load_context(args)
    names = list(args.scenarios)
    if names == ["all"]:
        names = sorted(builtin_scenarios())
    out_dir = Path(args.output) if args.output else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    planner_cls = PLANNERS[args.planner]
    status = 0
    for name in names:
        try:
            if name.endswith((".yaml", ".yml")):
                spec = scenario_from_mapping(yaml.safe_load(Path(name).read_text(encoding="utf-8")))
            else:
                spec = generate_scenario(name, seed=cfg.seed)
            case = run_closed_loop(spec, planner_cls())
            path = out_dir / f"{spec.name}_{args.planner}.jsonl"
            path.write_text(serialize_case(case), encoding="utf-8")
            print(f"{path}  frames={len(case.frames)}  crash={case.crash}")
        except (ValidationError, OSError, RuntimeError) as e:
            if args.strict:
                print(f"error: {name}: {e}", file=sys.stderr)
                return 1
            print(f"error: {name}: {e}", file=sys.stderr)
            status = 1
    return status


def cmd_heatmap(args) -> int:
    cfg, _, params = _load_context(args)
    try:
        case = parse_case(Path(args.case).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if not -len(case.frames) <= args.frame < len(case.frames):
        print(f"error: frame {args.frame} out of range (case has {len(case.frames)})",
              file=sys.stderr)
        return 1
    frame = case.frames[args.frame]
    grid = risk_heatmap(frame, params.dsf, HeatmapSpec())
    out_path = Path(args.output) if args.output else Path(f"{Path(args.case).stem}_risk.csv")
    out_path.write_text(grid_to_csv(grid), encoding="utf-8")
    print(f"grid written to {out_path}")
    if not args.no_figures:
        fig = figures.render_heatmap(grid, frame, out_path.with_suffix(".png"))
        print(f"figure written to {fig}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
