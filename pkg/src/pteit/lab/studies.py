"""The experiment drivers: Hessian accuracy, BFGS quality and the reconstruction suite."""

import logging
from pathlib import Path

import numpy as np

from .. import adjoint, ptensor
from ..errors import CapExceeded, LineSearchFailed
from ..neumann import NeumannEvaluator
from ..optim import VARIANTS, LaplaceReg, hessian_metrics, reconstruct
from .config import LabConfig
from .phantom import (NoiseSpec, add_noise, profile_peaks, rasterize_phantom, reconstruction_phantoms,
                      separated_peaks, single_inclusion, slice_profile, valley_depth)
from .report import ExperimentReport, write_csv, write_image_csv, write_run_log

log = logging.getLogger(__name__)

HESSIAN_STUDY_RINGS = 4       # 16 * 4^2 = 256 elements
SUITE_RINGS = 7               # 784 elements, close to the 800 used for the image comparisons
SWEEP_SIGMAS = np.round(np.linspace(0.5, 5.0, 19), 10)
TRACKED_POINTS = ((0.3, 0.3), (-0.3, 0.3), (0.0, -0.4))
ANGLE_THRESHOLD = np.pi / 15


def simulate(config, phantom, sim_model, noise=True):
    """Selected data of ``phantom`` on the simulation model, optionally with seeded noise."""
    d = sim_model(rasterize_phantom(phantom, sim_model.mesh))
    if not noise:
        return d
    return add_noise(d, NoiseSpec(config.snr, int(config.seed)))


def pearson(x, y):
    return float(np.corrcoef(x, y)[0, 1])


def slope_at(xs, ys, x):
    return float(np.gradient(np.asarray(ys, float), np.asarray(xs, float))[int(np.argmin(np.abs(xs - x)))])


def flattens(xs, ys, early=1.5, late=5.0, ratio=0.25):
    """|slope| at ``late`` below ``ratio`` times |slope| at ``early``."""
    return abs(slope_at(xs, ys, late)) < ratio * abs(slope_at(xs, ys, early))


def _tracked_elements(mesh, points):
    el = mesh.locate(np.asarray(points, float))
    if np.any(el < 0) or np.any(mesh.boundary_flags[el]):
        raise ValueError("tracked points must fall in interior elements")
    return el


def run_hessian_accuracy_study(config=None, out_dir="hessian-study", sigmas=SWEEP_SIGMAS,
                               tracked_points=TRACKED_POINTS):
    """True vs asymptotic Hessian diagonal at the homogeneous start, plus a contrast sweep.

    Data are noise free. Writes ``hessian_diag.csv`` and ``saturation.csv``.
    """
    config = config or LabConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recon, sim = config.meshes(HESSIAN_STUDY_RINGS)
    model, smodel = config.model(recon), config.model(sim)
    m0 = np.ones(recon.n_elems)
    state = model.state(m0)
    J = adjoint.jacobian_from_state(state)
    jtj = adjoint.gn_diag(J)
    Q = adjoint.second_derivative_table(state)

    tables = {}
    for mode in ("disc", "freespace"):
        ev = NeumannEvaluator(mode, radius=recon.radius, const_alt=config.neumann_const_alt)
        tables[mode] = ptensor.build_sensitivity_table(recon, state, ev).coefficients(m0)

    def approx(mode, d):
        C, D = tables[mode]
        return ptensor.approx_hessian_diag(C, D, state.f, d).values

    d = simulate(config, single_inclusion(), smodel, noise=False)
    h_true = jtj + (state.f - d) @ Q
    h_disc = approx("disc", d)
    h_free = approx("freespace", d)
    interior = ~recon.boundary_flags
    c = recon.centroids

    report = ExperimentReport("hessian-accuracy", config.to_dict(), out)
    report.add(write_csv(out / "hessian_diag.csv",
                         ["element", "x", "y", "boundary", "approx", "approx_freespace", "true"],
                         ((e, c[e, 0], c[e, 1], recon.boundary_flags[e], h_disc[e], h_free[e], h_true[e])
                          for e in range(recon.n_elems))))

    tracked = _tracked_elements(recon, tracked_points)
    sweep_true, sweep_approx = [], []
    rows = []
    for s in sigmas:
        ds = simulate(config, single_inclusion(sigma=float(s)), smodel, noise=False)
        ht = jtj[tracked] + (state.f - ds) @ Q[:, tracked]
        ha = approx("disc", ds)[tracked]
        sweep_true.append(ht)
        sweep_approx.append(ha)
        rows += [(s, e, t, a) for e, t, a in zip(tracked, ht, ha)]
    report.add(write_csv(out / "saturation.csv", ["sigma", "element", "true", "approx"], rows))
    sweep_true, sweep_approx = np.array(sweep_true), np.array(sweep_approx)

    def relerr(h):
        return float(np.linalg.norm(h[interior] - h_true[interior]) / np.linalg.norm(h_true[interior]))

    report.metrics = {
        "n_elements": recon.n_elems,
        "n_interior": int(interior.sum()),
        "simulation_elements": sim.n_elems,
        "corr_disc": pearson(h_disc[interior], h_true[interior]),
        "corr_freespace": pearson(h_free[interior], h_true[interior]),
        "relerr_disc": relerr(h_disc),
        "relerr_freespace": relerr(h_free),
        "tracked_elements": tracked.tolist(),
        "flattens_true": [flattens(sigmas, sweep_true[:, k]) for k in range(len(tracked))],
        "flattens_approx": [flattens(sigmas, sweep_approx[:, k]) for k in range(len(tracked))],
    }
    report.write()
    return report


def _run_tracked(model, d, config, variant, n_iter):
    cfg = config.solver(variant, stagnation_tol=0.0, max_iter=n_iter, track_dense=True, lbfgs_memory=None)
    try:
        return reconstruct(model, d, cfg)
    except LineSearchFailed as exc:
        log.warning("%s: %s; using the partial run", variant, exc)
        return exc.run


def run_bfgs_quality_study(config=None, out_dir="bfgs-study", n_iter=50, n_vectors=20):
    """Dense BFGS matrices from H~ and diag(J^T J) initial diagonals against the true Hessian.

    Uses the single-inclusion scenario with noise-free data. Writes
    ``bfgs_errors.csv`` (one row per iteration) and ``bfgs_angles.csv``.
    """
    config = config or LabConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recon, sim = config.meshes(HESSIAN_STUDY_RINGS)
    if recon.n_elems > adjoint.HESSIAN_CAP:
        raise CapExceeded(f"{recon.n_elems} elements exceeds the full-Hessian cap {adjoint.HESSIAN_CAP}")
    model, smodel = config.model(recon), config.model(sim)
    d = simulate(config, single_inclusion(), smodel, noise=False)
    reg_h = LaplaceReg.on(recon, config.lam).hessian.toarray()

    errs, angles, runs = {}, {}, {}
    for label, variant in (("H", "LBFGS_H"), ("GN", "LBFGS_GN")):
        run = _run_tracked(model, d, config, variant, n_iter)
        Hs = [adjoint.true_hessian(model, m, d, "full")[0] + reg_h for m in run.iterates[:len(run.B_history)]]
        errs[label], angles[label] = hessian_metrics(run.B_history, Hs, n_vectors)
        runs[label] = run

    report = ExperimentReport("bfgs-quality", config.to_dict(), out)
    n = max(len(errs["H"]), len(errs["GN"]))
    get = lambda a, k: a[k] if k < len(a) else None  # noqa: E731
    report.add(write_csv(out / "bfgs_errors.csv", ["iter", "error_H", "error_GN"],
                         ((k, get(errs["H"], k), get(errs["GN"], k)) for k in range(n))))
    k_cols = angles["H"].shape[1]
    rows = [(label, k, *angles[label][k]) for label in ("H", "GN") for k in range(len(angles[label]))]
    report.add(write_csv(out / "bfgs_angles.csv",
                         ["init", "iter"] + [f"angle_{i + 1}" for i in range(k_cols)], rows))

    def err_at(label, k):
        e = errs[label]
        return float(e[min(k, len(e) - 1)])

    def small(label, k):
        a = angles[label]
        return int(np.sum(a[min(k, len(a) - 1)] < ANGLE_THRESHOLD))

    report.metrics = {
        "n_elements": recon.n_elems,
        "iterations_H": runs["H"].iterations,
        "iterations_GN": runs["GN"].iterations,
        "termination_H": runs["H"].termination,
        "termination_GN": runs["GN"].termination,
        "error_H_25": err_at("H", 25),
        "error_GN_25": err_at("GN", 25),
        "error_ratio_25": err_at("GN", 25) / err_at("H", 25),
        "small_angles_H_5": small("H", 5),
        "small_angles_GN_50": small("GN", 50),
    }
    report.write()
    return report


def run_reconstruction_suite(config=None, out_dir="suite", phantoms=None, variants=VARIANTS, timing=False):
    """Every phantom against every solver variant on one reconstruction mesh.

    Per phantom and variant writes an image, an x = y slice profile and a
    run log; ``summary.csv`` holds iterations-to-stagnation and final
    relative residual.
    """
    config = config or LabConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recon, sim = config.meshes(SUITE_RINGS)
    model, smodel = config.model(recon), config.model(sim)
    phantoms = reconstruction_phantoms(config.radius) if phantoms is None else phantoms
    report = ExperimentReport("reconstruction-suite", config.to_dict(), out)
    summary = []
    results = {}
    for ph in phantoms:
        d = simulate(config, ph, smodel)
        pdir = out / ph.name
        report.add(write_image_csv(pdir / "truth.csv", sim, rasterize_phantom(ph, sim)))
        for v in variants:
            try:
                run = reconstruct(model, d, config.solver(v))
            except LineSearchFailed as exc:
                log.warning("%s/%s: %s", ph.name, v, exc)
                run = exc.run
            img = run.image
            t, prof = slice_profile(recon, img)
            report.add(write_image_csv(pdir / f"image_{v}.csv", recon, img))
            report.add(write_run_log(pdir / f"log_{v}.csv", run, timing))
            report.add(write_csv(pdir / f"slice_{v}.csv", ["t", "m"], zip(t, prof)))
            row = dict(phantom=ph.name, variant=v, iterations=run.iterations,
                       final_rel_resid=float(run.rel_resid[-1]), termination=run.termination,
                       n_peaks=len(profile_peaks(prof)), two_maxima=separated_peaks(t, prof),
                       valley_depth=valley_depth(prof))
            summary.append(row)
            results[(ph.name, v)] = run
    cols = ["phantom", "variant", "iterations", "final_rel_resid", "termination",
            "n_peaks", "two_maxima", "valley_depth"]
    report.add(write_csv(out / "summary.csv", cols, ([r[c] for c in cols] for r in summary)))
    report.metrics = {"n_elements": recon.n_elems, "simulation_elements": sim.n_elems, "runs": summary}
    report.write()
    report.runs = results
    return report
