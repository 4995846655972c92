"""Command line entry point: ``pteit <subcommand> [options]``."""

import argparse
import json
import logging
import sys
from pathlib import Path


from ..errors import ConfigError, EITError, NumericalError
from ..fem import read_data_csv, write_data_csv
from ..mesh import read_mesh, write_mesh
from ..optim import reconstruct
from .config import LabConfig
from .phantom import NoiseSpec, add_noise, rasterize_phantom, reconstruction_phantoms, single_inclusion
from .report import ExperimentReport, write_image_csv, write_run_log
from .studies import (HESSIAN_STUDY_RINGS, SUITE_RINGS, run_bfgs_quality_study, run_hessian_accuracy_study,
                      run_reconstruction_suite)

log = logging.getLogger("pteit")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _phantoms(radius):
    ph = {p.name: p for p in reconstruction_phantoms(radius)}
    single = single_inclusion()
    ph["single"] = single
    return ph


def _config(args):
    cfg = LabConfig.load(args.config) if args.config else LabConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.__post_init__()
    return cfg


def cmd_mesh(args, cfg, out):
    mesh = cfg.mesh(cfg.rings(SUITE_RINGS))
    path = out / "mesh.txt"
    write_mesh(path, mesh)
    print(f"{path}: {mesh.n_nodes} nodes, {mesh.n_elems} elements, hash {mesh.hash}")


def cmd_simulate(args, cfg, out):
    phantoms = _phantoms(cfg.radius)
    if args.phantom not in phantoms:
        raise ConfigError(f"unknown phantom {args.phantom!r}; choose from {sorted(phantoms)}")
    ph = phantoms[args.phantom]
    # simulation mesh is the refined partner of the reconstruction mesh
    sim = cfg.mesh(2 * cfg.rings(SUITE_RINGS))
    model = cfg.model(sim)
    raw = model.raw(rasterize_phantom(ph, sim))
    data = add_noise(raw, NoiseSpec(cfg.snr, int(cfg.seed)))
    rep = ExperimentReport("simulate", cfg.to_dict(), out)
    rep.add(write_image_csv(out / "truth.csv", sim, rasterize_phantom(ph, sim)))
    write_data_csv(out / "data.csv", data, sim.n_electrodes)
    rep.add(out / "data.csv")
    rep.metrics = {"phantom": ph.name, "simulation_mesh_hash": sim.hash, "n_raw": int(raw.size)}
    rep.write()
    print(f"{out / 'data.csv'}: {raw.size} raw measurements of {ph.name}")


def cmd_reconstruct(args, cfg, out):
    mesh = read_mesh(args.mesh) if args.mesh else cfg.mesh(cfg.rings(SUITE_RINGS))
    side = Path(args.data).parent / "report.json"
    if side.exists():
        meta = json.loads(side.read_text()).get("metrics", {})
        if meta.get("simulation_mesh_hash") == mesh.hash:
            raise ConfigError("data were simulated on the reconstruction mesh (inverse crime)")
    model = cfg.model(mesh)
    raw = read_data_csv(args.data, mesh.n_electrodes)
    d = model.select(raw)
    run = reconstruct(model, d, cfg.solver())
    rep = ExperimentReport("reconstruct", cfg.to_dict(), out)
    rep.add(write_image_csv(out / "image.csv", mesh, run.image))
    rep.add(write_run_log(out / "log.csv", run, args.timing))
    rep.metrics = {"variant": cfg.variant, "iterations": run.iterations,
                   "final_rel_resid": float(run.rel_resid[-1]), "termination": run.termination}
    rep.write()
    print(f"{cfg.variant}: {run.iterations} iterations, relative residual {run.rel_resid[-1]:.4g}")


def _summarise(rep):
    for key, val in rep.metrics.items():
        if key != "runs":
            print(f"{key}: {val}")


def cmd_hessian_study(args, cfg, out):
    _summarise(run_hessian_accuracy_study(cfg, out))


def cmd_bfgs_study(args, cfg, out):
    _summarise(run_bfgs_quality_study(cfg, out, n_iter=args.iterations))


def cmd_suite(args, cfg, out):
    rep = run_reconstruction_suite(cfg, out, timing=args.timing)
    for r in rep.metrics["runs"]:
        print(f"{r['phantom']:>18} {r['variant']:>10} {r['iterations']:4d} {r['final_rel_resid']:.4g}")


def cmd_plot(args, cfg, out):
    from .plot import plot_csv

    for csv_path in args.csv:
        target = out / (Path(csv_path).stem + ".svg") if args.out else None
        print(plot_csv(csv_path, target))


def build_parser():
    p = argparse.ArgumentParser(prog="pteit", description="2D EIT reconstruction experiments")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", help="output directory (default: current directory)")
    p.add_argument("--seed", type=int, help="noise seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("mesh", help="generate and export the reconstruction mesh").set_defaults(func=cmd_mesh)

    s = sub.add_parser("simulate", help="simulate noisy data for a phantom")
    s.add_argument("--phantom", default="single")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", help="reconstruct an image from a data CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--mesh", help="tri-mesh file (default: generated from the config)")
    s.add_argument("--timing", action="store_true", help="record wall-clock times in the run log")
    s.set_defaults(func=cmd_reconstruct)

    sub.add_parser("hessian-study", help="true vs approximate Hessian diagonal").set_defaults(
        func=cmd_hessian_study)

    s = sub.add_parser("bfgs-study", help="dense BFGS quality against the true Hessian")
    s.add_argument("--iterations", type=int, default=50)
    s.set_defaults(func=cmd_bfgs_study)

    s = sub.add_parser("suite", help="four phantoms against every solver variant")
    s.add_argument("--timing", action="store_true")
    s.set_defaults(func=cmd_suite)

    s = sub.add_parser("plot", help="render study CSVs to SVG")
    s.add_argument("csv", nargs="+")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EITError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
