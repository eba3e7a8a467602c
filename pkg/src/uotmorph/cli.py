"""Command-line driver.

    uotmorph <command> --config <path> [--stage-only] [--workers N] [--seed S]

Commands: run, synth, template, transport, features, correlate, analytic,
export-slice.  Stage commands run their upstream stages first when needed
(completed stages are content-hash no-ops); with --stage-only they require
the upstream artifacts to exist already.  Exit codes: 0 success, 2 config
error, 3 data error, 4 solver failure.  The UOTMORPH_LOG environment
variable (debug/info/warning) selects log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .analytic import correlation_curves, write_curves_csv
from .errors import ConfigError, DataError, SolverError, UotmorphError
from .grid import load_field
from .pipeline import (
    PipelineConfig,
    StageFailure,
    _RunLog,
    load_config,
    run_pipeline,
    stage_correlate,
    stage_features,
    stage_synth,
    stage_template,
    stage_transport,
)
from .stats import render_pgm_slice

log = logging.getLogger("uotmorph")

_STAGE_ORDER = ("synth", "template", "transport", "features", "correlate")


def _setup_logging():
    level = os.environ.get("UOTMORPH_LOG", "warning").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    updates = {}
    if args.workers is not None:
        updates["workers"] = args.workers
    if args.seed is not None:
        updates["seed"] = args.seed
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _manifest_path(cfg: PipelineConfig) -> str:
    if cfg.synth is not None:
        return os.path.join(cfg.output_dir, "dataset", "manifest.csv")
    return cfg.manifest


def _run_stages(cfg: PipelineConfig, upto: str, stage_only: bool) -> None:
    os.makedirs(cfg.output_dir, exist_ok=True)
    runlog = _RunLog(os.path.join(cfg.output_dir, "run_log.jsonl"))
    want = _STAGE_ORDER.index(upto)

    manifest = _manifest_path(cfg)
    template = os.path.join(cfg.output_dir, "template", "template.otfg")

    def require(path, what, producer):
        if not path or not os.path.exists(path):
            raise DataError(
                f"{what} not found at {path!r}; run the {producer} stage first"
            )

    if stage_only:
        if upto == "synth":
            stage_synth(cfg, runlog)
            return
        require(manifest, "manifest", "synth")
        if upto == "template":
            stage_template(cfg, manifest, runlog)
            return
        require(template, "template", "template")
        if upto == "transport":
            stage_transport(cfg, manifest, template, runlog)
        elif upto == "features":
            stage_features(cfg, manifest, template, runlog)
        else:
            stage_correlate(cfg, manifest, runlog)
        return

    manifest = stage_synth(cfg, runlog)
    if want == 0:
        return
    require(manifest, "manifest", "synth")
    if want >= 1:
        template = stage_template(cfg, manifest, runlog)
    if want >= 2:
        stage_transport(cfg, manifest, template, runlog)
    if want >= 3:
        stage_features(cfg, manifest, template, runlog)
    if want >= 4:
        stage_correlate(cfg, manifest, runlog)


def _cmd_pipeline(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    if args.command == "run":
        run_pipeline(cfg)
        log.info("pipeline complete: %s", cfg.output_dir)
    else:
        _run_stages(cfg, args.command, args.stage_only)
    return 0


def _cmd_analytic(args) -> int:
    try:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read analytic config: {exc}") from exc
    known = {"p", "n_max", "panels"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown analytic config keys: {sorted(unknown)}")
    panels = raw.get("panels")
    if not panels or not isinstance(panels, list):
        raise ConfigError("analytic config needs a non-empty 'panels' list")
    base = os.path.dirname(os.path.abspath(args.config))
    for panel in panels:
        if not isinstance(panel, dict):
            raise ConfigError(f"panel entries must be objects, got {panel!r}")
        unknown = set(panel) - {"t_h", "t_p_list", "p", "n_max", "output"}
        if unknown:
            raise ConfigError(f"unknown panel keys: {sorted(unknown)}")
        for key in ("t_h", "t_p_list", "output"):
            if key not in panel:
                raise ConfigError(f"panel is missing {key!r}")
        rows = correlation_curves(
            t_h=float(panel["t_h"]),
            t_p_list=[float(v) for v in panel["t_p_list"]],
            p=float(panel.get("p", raw.get("p", 0.5))),
            n_max=int(panel.get("n_max", raw.get("n_max", 200))),
        )
        out = panel["output"]
        if not os.path.isabs(out):
            out = os.path.join(base, out)
        write_curves_csv(rows, out)
        log.info("wrote %s (%d rows)", out, len(rows))
    return 0


def _cmd_export_slice(args) -> int:
    _domain, field = load_field(args.input)
    render_pgm_slice(
        field, args.output, axis=args.axis, index=args.index, bound=args.bound
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uotmorph",
        description="Unbalanced optimal transport morphometry pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("run",) + _STAGE_ORDER:
        p = sub.add_parser(name, help=f"{name} stage" if name != "run" else
                           "run the full pipeline")
        p.add_argument("--config", required=True)
        p.add_argument("--stage-only", action="store_true",
                       help="do not run missing upstream stages")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(func=_cmd_pipeline)

    p = sub.add_parser("analytic", help="closed-form correlation curves")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_analytic)

    p = sub.add_parser("export-slice", help="render a PGM slice of a map")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--axis", type=int, default=0)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--bound", type=float, default=0.65)
    p.set_defaults(func=_cmd_export_slice)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageFailure as exc:
        log.error("%s", exc)
        print(f"uotmorph: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, ConfigError):
            return 2
        if isinstance(cause, DataError):
            return 3
        return 4
    except ConfigError as exc:
        print(f"uotmorph: config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"uotmorph: data error: {exc}", file=sys.stderr)
        return 3
    except SolverError as exc:
        print(f"uotmorph: solver failure: {exc}", file=sys.stderr)
        return 4
    except UotmorphError as exc:
        print(f"uotmorph: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
