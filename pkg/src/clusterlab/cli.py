"""Command line entry point: ``clusterlab run|list|validate``.

Exit status: 0 success, 1 a numerical invariant was violated (results are
still written, with the ``violated`` column set), 2 usage error, 3 invalid
configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import REGISTRY, run as run_experiment, worker_count
from .io import write_rows, write_svg_loglog, _jsonable

EXIT_OK, EXIT_VIOLATED, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("clusterlab")


def list_experiments(as_json: bool = False) -> str:
    entries = [{"name": s.name, "description": s.description, "anchor": s.anchor, "defaults": _jsonable(s.defaults)}
               for s in REGISTRY.values()]
    if as_json:
        return json.dumps(entries, indent=2, sort_keys=True)
    width = max(len(e["name"]) for e in entries)
    return "\n".join(f"{e['name']:<{width}}  {e['description']}  [{e['anchor']}]" for e in entries)


def run_config(cfg: ExperimentConfig, output_dir=None, plot=None) -> tuple:
    """Run one experiment and write its artifacts; returns (exit status, output directory)."""
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = run_experiment(cfg)
    wall = time.perf_counter() - t0
    write_rows(out / "results.csv", result.rows, result.columns, result.key)
    plotted = None
    if (cfg.plot if plot is None else plot) and result.series:
        plotted = write_svg_loglog(out / "plot.svg", result.series, cfg.experiment)
    manifest = {
        "config": cfg.to_dict(),
        "version": __version__,
        "wall_time_s": round(wall, 3),
        "threads": worker_count(),
        "rows": len(result.rows),
        "violated_rows": result.violated,
        "summary": _jsonable(result.summary),
        "plot": plotted.name if plotted else None,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return (EXIT_VIOLATED if result.violated else EXIT_OK), out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clusterlab", description="Desk-scale experiments on spectral clusters.")
    p.add_argument("--version", action="version", version=f"clusterlab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a TOML or JSON config")
    r.add_argument("config")
    r.add_argument("-o", "--output-dir", help="override output_dir from the config")
    r.add_argument("--no-plot", action="store_true", help="skip plot.svg")
    ls = sub.add_parser("list", help="list registered experiments")
    ls.add_argument("--json", action="store_true", help="machine-readable listing")
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "list":
        print(list_experiments(args.json))
        return EXIT_OK
    try:
        cfg = load_config(args.config, REGISTRY)
    except ConfigError as e:
        for line in e.problems:
            print(f"{args.config}: {line}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    status, out = run_config(cfg, args.output_dir, False if args.no_plot else None)
    if status == EXIT_VIOLATED:
        print(f"{cfg.experiment}: invariant violated; see {out / 'results.csv'}", file=sys.stderr)
    else:
        print(f"{cfg.experiment}: wrote {out}")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
