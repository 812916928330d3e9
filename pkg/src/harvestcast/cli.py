"""``harvestcast`` command line.

Every subcommand takes ``--config FILE`` with ``key = value`` lines whose
keys are flag names (``max-epochs = 300``); flags given on the command
line override the file. Exit codes: 0 ok, 2 bad input or format,
3 numeric failure, 4 missing source data.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (Dataset, generate_synthetic, load_samples, normalize_arrays, split_dataset, validate_sample,
                   write_samples)
from .errors import (EXIT_INPUT, EXIT_MISSING, EXIT_NUMERIC, ContractError, InputError, MissingDataError,
                     NumericError, SampleTableError)
from .forecast import DEFAULT_RESOLUTION_DEG, BBoxRequest, predict_bbox
from .metrics import compute_metrics, format_report, report_csv
from .model import YieldNetConfig, build, load_checkpoint, save_checkpoint
from .raster import assemble_features, load_sources_config, read_esri_ascii, read_kv_file, write_grid
from .train import TrainConfig, batched_predict, train_loop, write_history

def _add_config(p):
    p.add_argument("--config", help="key = value file of defaults for this command")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _build_parser():
    parser = argparse.ArgumentParser(prog="harvestcast", description="Crop yield forecasting from soil and weather grids.")
    parser.add_argument("--version", action="version", version=f"harvestcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert an ESRI ASCII raster to AGRD")
    _add_config(p)
    p.add_argument("--input", help="ESRI ASCII grid (.asc)")
    p.add_argument("--variable", help="variable name stored in the grid (default: file stem)")
    p.add_argument("--out", help="output .agrd path")

    p = sub.add_parser("dataset", help="join a yield table with source grids into a sample table")
    _add_config(p)
    p.add_argument("--yields", help="CSV with region_id, year, lat, lon, yield_kg_ha [, season_start]")
    p.add_argument("--sources", help="sources config (key = value)")
    p.add_argument("--season-start-month", type=int, default=9,
                   help="first month of the 8-month window, in the row's year (default 9)")
    p.add_argument("--out", help="output sample table (CSV)")

    p = sub.add_parser("train", help="train a model on a sample table")
    _add_config(p)
    p.add_argument("--samples", help="sample table (CSV)")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--history", help="optional per-epoch log (CSV)")
    p.add_argument("--seed", type=int, default=0, help="seed for split, init and shuffling")
    p.add_argument("--max-epochs", type=int, default=1000)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=0.0005)
    p.add_argument("--lstm-units", type=int, default=280)
    p.add_argument("--dense-units", type=int, default=100)

    p = sub.add_parser("evaluate", help="score a checkpoint on one split of a sample table")
    _add_config(p)
    p.add_argument("--samples", help="sample table (CSV)")
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--seed", type=int, default=0, help="split seed used at training time")
    p.add_argument("--split", choices=["train", "validation", "test", "all"], default="test")
    p.add_argument("--name", default="model", help="column label in the report")
    p.add_argument("--report", help="optional CSV report path")

    p = sub.add_parser("predict-bbox", help="forecast a yield grid over a bounding box")
    _add_config(p)
    p.add_argument("--bbox", help="lat_min,lon_min,lat_max,lon_max")
    p.add_argument("--resolution-deg", type=float, default=DEFAULT_RESOLUTION_DEG)
    p.add_argument("--checkpoint", help="checkpoint path")
    p.add_argument("--sources", help="sources config (key = value)")
    p.add_argument("--season", help="first month of the window, YYYY-MM")
    p.add_argument("--seed", type=int, default=0, help="accepted for symmetry; forecasting is deterministic")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output .agrd path")

    p = sub.add_parser("synth", help="generate a synthetic sample table, or a synthetic world on disk")
    _add_config(p)
    p.add_argument("--n", type=int, default=2000, help="samples in the table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05, help="noise sigma as a fraction of mean yield")
    p.add_argument("--out", help="sample table path (CSV)")
    p.add_argument("--world", help="write grids, sources.cfg and yields.csv into this directory instead")
    p.add_argument("--bbox", default="-20.5,-50.5,-19.5,-49.5", help="world extent lat_min,lon_min,lat_max,lon_max")
    p.add_argument("--years", default="2015-2017", help="world seasons, e.g. 2015-2017")
    p.add_argument("--regions", type=int, default=40, help="yield regions per season in the world")
    p.add_argument("--season-start-month", type=int, default=9)
    return parser, sub


def _parse(argv):
    parser, sub = _build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        entries = read_kv_file(args.config)
        subparser = sub.choices[args.command]
        known = {a.dest: a for a in subparser._actions}
        defaults = {}
        for key, value in entries.items():
            dest = key.replace("-", "_")
            if dest not in known or dest == "config":
                raise ContractError(f"{args.config}: unknown key {key!r} for '{args.command}'")
            defaults[dest] = value
        # string defaults go through each argument's type conversion
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _need(args, *names):
    missing = [n for n in names if getattr(args, n.replace("-", "_")) in (None, "")]
    if missing:
        raise ContractError("missing required option(s): " + ", ".join("--" + n for n in missing))


def cmd_ingest(args):
    _need(args, "input", "out")
    grid = read_esri_ascii(args.input, args.variable or Path(args.input).stem)
    write_grid(grid, args.out)
    print(f"wrote {args.out}: {grid.variable} {grid.rows}x{grid.cols}")


def cmd_dataset(args):
    _need(args, "yields", "sources", "out")
    if not 1 <= args.season_start_month <= 12:
        raise ContractError("--season-start-month must be in 1..12")
    client = load_sources_config(args.sources)
    ids, years, statics, dynamics, ys = [], [], [], [], []
    errors = []
    with open(args.yields, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"region_id", "year", "lat", "lon", "yield_kg_ha"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise SampleTableError([(1, "yield table needs columns " + ", ".join(sorted(need)))])
        for row in reader:
            line = reader.line_num
            try:
                year = int(row["year"])
                lat, lon, y = float(row["lat"]), float(row["lon"]), float(row["yield_kg_ha"])
            except (TypeError, ValueError) as exc:
                errors.append((line, str(exc)))
                continue
            season = row.get("season_start") or f"{year:04d}-{args.season_start_month:02d}"
            static, dynamic = assemble_features(client, lat, lon, season)
            problems = validate_sample(static, dynamic, y)
            if problems:
                errors.append((line, "; ".join(problems)))
                continue
            ids.append(row["region_id"])
            years.append(year)
            statics.append(static)
            dynamics.append(dynamic)
            ys.append(y)
    if errors:
        raise SampleTableError(errors)
    if not ids:
        raise ContractError(f"{args.yields} has no rows")
    ds = Dataset(ids, np.array(years), np.array(statics), np.array(dynamics), np.array(ys),
                 provenance=f"dataset:{args.yields}")
    write_samples(ds, args.out)
    print(f"wrote {args.out}: {len(ds)} samples")


def cmd_train(args):
    _need(args, "samples", "checkpoint")
    ds = split_dataset(load_samples(args.samples), args.seed)
    cfg = YieldNetConfig(lstm_units=args.lstm_units, dense_units=args.dense_units, learning_rate=args.learning_rate)
    net = build(cfg, seed=args.seed)
    tcfg = TrainConfig(max_epochs=args.max_epochs, patience=args.patience, batch_size=args.batch_size,
                       seed=args.seed, learning_rate=args.learning_rate)
    net, history = train_loop(net, ds, tcfg)
    save_checkpoint(net, args.checkpoint)
    if args.history:
        write_history(history, args.history)
    best = min(history, key=lambda h: h.val_loss)
    print(f"trained {len(history)} epochs; best val MAE {best.val_loss:.3f} at epoch {best.epoch}; wrote {args.checkpoint}")


def cmd_evaluate(args):
    _need(args, "samples", "checkpoint")
    net = load_checkpoint(args.checkpoint)
    if net.norm is None:
        raise ContractError(f"{args.checkpoint} carries no normalization statistics")
    ds = load_samples(args.samples)
    if args.split == "all":
        idx = np.arange(len(ds))
    else:
        idx = split_dataset(ds, args.seed).indices(args.split)
    s, d = normalize_arrays(ds.static[idx], ds.dynamic[idx], net.norm)
    scores = {args.name: compute_metrics(batched_predict(net, d, s), ds.yields[idx])}
    print(format_report(scores))
    if args.report:
        Path(args.report).write_text(report_csv(scores))


def cmd_predict_bbox(args):
    _need(args, "bbox", "checkpoint", "sources", "season", "out")
    req = BBoxRequest.parse(args.bbox, args.resolution_deg, args.season, args.checkpoint)
    net = load_checkpoint(args.checkpoint)
    client = load_sources_config(args.sources)
    grid = predict_bbox(req, client, net, workers=args.workers)
    write_grid(grid, args.out)
    valid = int((~grid.missing_mask()).sum())
    print(f"wrote {args.out}: {grid.rows}x{grid.cols} cells, {valid} with forecasts")


def cmd_synth(args):
    if args.world:
        from .world import write_world
        bbox = BBoxRequest.parse(args.bbox).as_tuple()
        first, _, last = args.years.partition("-")
        years = range(int(first), int(last or first) + 1)
        cfg = write_world(args.world, bbox, seed=args.seed, years=tuple(years),
                          season_start_month=args.season_start_month, n_regions=args.regions, noise=args.noise)
        print(f"wrote world to {args.world} (sources: {cfg})")
        return
    _need(args, "out")
    ds = generate_synthetic(args.n, args.seed, noise=args.noise)
    write_samples(ds, args.out)
    print(f"wrote {args.out}: {len(ds)} synthetic samples")


COMMANDS = {
    "ingest": cmd_ingest,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict-bbox": cmd_predict_bbox,
    "synth": cmd_synth,
}


def main(argv=None):
    try:
        args = _parse(argv)
    except InputError as exc:
        print(f"harvestcast: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"harvestcast: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MissingDataError as exc:
        print(f"harvestcast: missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (InputError, ValueError, OSError) as exc:
        print(f"harvestcast: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
