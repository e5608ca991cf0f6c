"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dataio.simulator import corridor_scene, load_scene, simulate
from .dataio.streams import DEFAULT_FILES, GroundTruth, _read_csv, export_streams, ingest_dataset
from .errors import DataLoadError, EvaluationError, GprOdomError, InvalidInputError, RankDeficiencyError
from .evaluation import evaluate_trajectory
from .fusion.state import read_trajectory_csv
from .pipeline import MODALITIES, PipelineConfig, extract_distances, run_pipeline

log = logging.getLogger("gprodom")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _modalities(text):
    names = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in names if m not in MODALITIES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"choose from {','.join(MODALITIES)}")
    return names


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gprodom", description="GPR-assisted multimodal odometry")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a scene and write a dataset directory")
    s.add_argument("--config", help="scene YAML file (default: built-in corridor)")
    s.add_argument("--noisy", action="store_true", help="built-in corridor with default sensor noise")
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--out", required=True, help="dataset directory to create")

    e = sub.add_parser("extract", help="dataset -> SFM dumps and GPR distance CSV")
    e.add_argument("dataset")
    e.add_argument("--config", help="pipeline YAML file")
    e.add_argument("--out", required=True)

    o = sub.add_parser("odom", help="dataset or scene -> trajectories and report")
    o.add_argument("dataset", nargs="?", help="dataset directory (or give a scene in --config)")
    o.add_argument("--config", help="pipeline YAML file")
    o.add_argument("--seed", type=_seed, help="simulator seed when the config names a scene")
    o.add_argument("--modalities", type=_modalities, help=f"comma list from {','.join(MODALITIES)}")
    o.add_argument("--out", required=True)

    v = sub.add_parser("eval", help="trajectory + ground truth -> report")
    v.add_argument("trajectory", help="trajectory CSV (timestamp_s,px,py,pz,qw,qx,qy,qz)")
    v.add_argument("ground_truth", help="ground_truth.csv or a dataset directory containing it")
    v.add_argument("--max-dt", type=float, default=0.1)
    v.add_argument("--out", required=True, help="report JSON path")
    return p


def _load_config(args) -> PipelineConfig:
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    except (OSError, yaml.YAMLError, InvalidInputError, TypeError) as exc:
        raise UsageError(f"bad config {args.config}: {exc}") from None
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "modalities", None):
        cfg.modalities = args.modalities
    return cfg


def cmd_simulate(args):
    if args.config:
        try:
            scene = load_scene(args.config)
        except (OSError, yaml.YAMLError, InvalidInputError, TypeError) as exc:
            raise UsageError(f"bad scene {args.config}: {exc}") from None
    else:
        scene = corridor_scene(noisy=args.noisy)
    streams = simulate(scene, args.seed)
    export_streams(streams, args.out)
    print(f"wrote {streams.n_traces} traces, {len(streams.imu)} IMU and {len(streams.wheel)} wheel samples to {args.out}")


def cmd_extract(args):
    cfg = _load_config(args)
    streams = ingest_dataset(cfg.dataset, cfg.schema)
    d = extract_distances(streams, cfg)
    out = Path(args.out)
    sfm_dir = out / "sfm"
    sfm_dir.mkdir(parents=True, exist_ok=True)
    for k, s in enumerate(d.stream.sfms):
        if s is not None:
            (sfm_dir / f"sfm_{k:05d}.txt").write_text(s.to_text())
    with (out / "distances.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_from", "t_to", "shift_l", "cost", "valid", "u_m", "sigma_m"])
        for k, m in enumerate(d.stream.matches):
            z = d.per_interval[k]
            row = [repr(float(d.times[k])), repr(float(d.times[k + 1]))]
            if m is None:
                row += ["", "", "0", "", ""]
            else:
                row += [str(m.shift_l), repr(m.cost), str(int(m.valid))]
                row += ["", ""] if z is None else [repr(z.u_m), repr(z.sigma_m)]
            w.writerow(row)
    print(f"{len(d.measurements)} valid distances of {len(d.stream.matches)} intervals (k = {d.k_coeff:.5g} m/column)")


def cmd_odom(args):
    cfg = _load_config(args)
    if cfg.dataset is None and cfg.scene is None:
        raise UsageError("odom needs a dataset directory or a config naming a scene")
    result = run_pipeline(cfg, out_dir=args.out)
    rep = result.report
    for name in cfg.modalities:
        r = rep.per_modality.get(name)
        status = rep.failures.get(name, "no ground truth" if r is None else f"rmse {r:.4f} m")
        print(f"{name:>11}: {status}")
    if not result.trajectories:
        raise EvaluationError("every configuration failed")


def _read_ground_truth(path) -> GroundTruth:
    p = Path(path)
    if p.is_dir():
        p = p / DEFAULT_FILES["ground_truth"]
    data, _ = _read_csv(p, ["t_s", "x", "y", "z"])
    return GroundTruth(data["t_s"], np.column_stack([data["x"], data["y"], data["z"]]))


def cmd_eval(args):
    try:
        traj = read_trajectory_csv(args.trajectory)
    except OSError as exc:
        raise DataLoadError(str(exc)) from None
    except InvalidInputError as exc:
        raise DataLoadError(str(exc)) from None
    gt = _read_ground_truth(args.ground_truth)
    rep = evaluate_trajectory(traj, gt, args.max_dt, name=Path(args.trajectory).stem)
    rep.save(args.out)
    print(f"rmse {rep.rmse_m:.4f} m over {rep.details[rep.primary]['pairs']} poses")


COMMANDS = {"simulate": cmd_simulate, "extract": cmd_extract, "odom": cmd_odom, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors, --help, --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gprodom: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataLoadError as exc:
        print(f"gprodom: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RankDeficiencyError, EvaluationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gprodom: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, GprOdomError) as exc:
        print(f"gprodom: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"gprodom: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
