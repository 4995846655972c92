"""Acceptance criteria 1-8, one test and one pass/fail line each.

Run with ``pytest -v tests/test_acceptance.py``; the lines are repeated in
the terminal summary (or inline with ``-s``).
"""

import time

import numpy as np
import pytest

from pteit import adjoint
from pteit.lab import LabConfig, run_bfgs_quality_study, run_hessian_accuracy_study, run_reconstruction_suite
from pteit.lab.cli import main as cli
from pteit.mesh import make_disc_mesh
from pteit.neumann import NeumannEvaluator, grad_z_neumann_disc, neumann_disc
from pteit.ptensor import polya_szego, polya_szego_derivs

LINES = {}


def record(n, title, ok, detail, elapsed, limit=None):
    ok = bool(ok) and (limit is None or elapsed < limit)
    budget = f" of {limit:g} s" if limit else ""
    line = f"criterion {n} {title}: {'PASS' if ok else 'FAIL'} ({detail}; {elapsed:.1f} s{budget})"
    LINES[n] = line
    print(line)
    return ok


def fd(fun, m, j, rel=1e-6):
    h = rel * max(abs(m[j]), 1.0)
    e = np.zeros_like(m)
    e[j] = h
    return (fun(m + e) - fun(m - e)) / (2 * h)


def test_criterion_1_derivative_oracles(model64):
    t0 = time.perf_counter()
    model = model64
    rng = np.random.default_rng(2024)
    m = rng.uniform(0.5, 2.0, model.mesh.n_elems)
    d = model(rng.uniform(0.5, 2.0, model.mesh.n_elems))
    J = adjoint.jacobian(model, m)
    cols = rng.choice(model.mesh.n_elems, 20, replace=False)
    jac_err = max(np.linalg.norm(fd(model, m, j) - J[:, j]) / np.linalg.norm(J[:, j]) for j in cols)
    Hd, _ = adjoint.true_hessian(model, m, d, mode="diagonal")
    hess_err = max(abs(fd(lambda x: adjoint.misfit_and_gradient(model, x, d)[1], m, j)[j] - Hd[j]) / abs(Hd[j])
                   for j in cols)
    ok = record(1, "derivative oracles", jac_err <= 1e-5 and hess_err <= 1e-4,
                f"Jacobian rel err {jac_err:.2e}, Hessian diag rel err {hess_err:.2e}",
                time.perf_counter() - t0, 30)
    assert ok


def test_criterion_2_tensor_closed_forms():
    t0 = time.perf_counter()
    worst1 = worst2 = 0.0
    for gamma in (0.1, 0.5, 2.0, 5.0, 50.0):
        for a, b, theta in ((1.0, 2.0, 0.0), (0.3, 0.1, 0.9), (2.0, 2.0, -1.2)):
            h = 1e-5 * gamma
            dM, d2M = polya_szego_derivs(a, b, theta, 1.0, gamma)
            fd1 = (polya_szego(a, b, theta, 1.0, gamma + h) - polya_szego(a, b, theta, 1.0, gamma - h)) / (2 * h)
            fd2 = (polya_szego_derivs(a, b, theta, 1.0, gamma + h)[0]
                   - polya_szego_derivs(a, b, theta, 1.0, gamma - h)[0]) / (2 * h)
            worst1 = max(worst1, np.abs(fd1 - dM).max() / np.abs(dM).max())
            worst2 = max(worst2, np.abs(fd2 - d2M).max() / np.abs(d2M).max())
    zero = np.all(polya_szego(1.3, 0.4, 0.7, 2.0, 1.0) == 0.0)
    ident = np.array_equal(polya_szego_derivs(1.3, 0.4, 0.7, 2.0, 1.0)[0], 2.0 * np.eye(2))
    ok = record(2, "tensor closed forms", worst1 <= 1e-8 and worst2 <= 1e-6 and zero and ident,
                f"dM rel err {worst1:.1e}, d2M rel err {worst2:.1e}, M(1)=0 {zero}, dM(1)=|B|I {ident}",
                time.perf_counter() - t0, 1)
    assert ok


def test_criterion_3_neumann():
    t0 = time.perf_counter()
    n = 4096
    phi = 2 * np.pi * np.arange(n) / n
    circle = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    sources = np.array([[0.3, 0.2], [0.5, 0.0], [-0.2, -0.4]])
    mean = np.abs(neumann_disc(circle, sources).sum(axis=0) * 2 * np.pi / n).max()

    mesh = make_disc_mesh(n_rings=14)
    x = mesh.electrode_points()
    v, a = NeumannEvaluator("fem", mesh=mesh).value(x, sources), neumann_disc(x, sources)
    fem_err = (np.abs(v - a).max(axis=0) / np.abs(a).max(axis=0)).max()

    rng = np.random.default_rng(3)
    grad_err = 0.0
    for _ in range(200):
        xb = circle[rng.integers(n)]
        z = rng.uniform(0, 0.9) * np.array([np.cos(t := rng.uniform(-np.pi, np.pi)), np.sin(t)])
        g = grad_z_neumann_disc(xb, z)
        h = 1e-6
        f = np.array([(neumann_disc(xb, z + h * e) - neumann_disc(xb, z - h * e)) / (2 * h) for e in np.eye(2)])
        grad_err = max(grad_err, np.linalg.norm(f - g) / max(np.linalg.norm(g), 1.0))
    ok = record(3, "Neumann function", mean <= 1e-6 and fem_err <= 0.05 and grad_err <= 1e-6,
                f"boundary mean {mean:.1e}, FEM rel err {fem_err:.3f}, gradient FD err {grad_err:.1e}",
                time.perf_counter() - t0, 60)
    assert ok


@pytest.fixture(scope="module")
def hessian_study(tmp_path_factory):
    t0 = time.perf_counter()
    rep = run_hessian_accuracy_study(LabConfig(), tmp_path_factory.mktemp("hessian"))
    return rep, time.perf_counter() - t0


def test_criterion_4_hessian_quality(hessian_study):
    rep, elapsed = hessian_study
    c, cf = rep.metrics["corr_disc"], rep.metrics["corr_freespace"]
    ok = record(4, "Hessian approximation quality", c >= 0.9 and c > cf,
                f"corr disc {c:.5f}, corr free space {cf:.5f}", elapsed, 300)
    assert ok


def test_criterion_5_saturation(hessian_study):
    rep, elapsed = hessian_study
    ft, fa = rep.metrics["flattens_true"], rep.metrics["flattens_approx"]
    ok = record(5, "saturation", all(ft) and all(fa),
                f"true flattens {ft}, approx flattens {fa}", elapsed, 300)
    assert ok


def test_criterion_6_bfgs_quality(tmp_path):
    t0 = time.perf_counter()
    m = run_bfgs_quality_study(LabConfig(), tmp_path).metrics
    ratio = m["error_ratio_25"]
    ordered = m["error_H_25"] < m["error_GN_25"]
    angles = m["small_angles_H_5"] >= m["small_angles_GN_50"]
    ok = record(6, "BFGS quality", ordered and ratio >= 1.5 and angles,
                f"error at 25: H~ {m['error_H_25']:.3f} vs GN {m['error_GN_25']:.3f} (ratio {ratio:.2f}); "
                f"small angles H~@5 {m['small_angles_H_5']} vs GN@50 {m['small_angles_GN_50']}",
                time.perf_counter() - t0, 900)
    assert ok


def _extent(ph):
    return max(np.hypot(*i.center) + i.radius for i in ph.inclusions)


def test_criterion_7_reconstruction_suite(tmp_path):
    from pteit.lab import reconstruction_phantoms

    t0 = time.perf_counter()
    rep = run_reconstruction_suite(LabConfig(), tmp_path)
    runs = {(r["phantom"], r["variant"]): r for r in rep.metrics["runs"]}
    phantoms = reconstruction_phantoms()
    names = [p.name for p in phantoms]

    a = {p: runs[p, "LBFGS_I"]["final_rel_resid"] / runs[p, "LBFGS_H"]["final_rel_resid"] for p in names}
    interior = [p.name for p in sorted(phantoms, key=_extent)[:3]]
    b = {p: (runs[p, "LBFGS_GNH"]["iterations"], runs[p, "LBFGS_GN"]["iterations"]) for p in interior}
    wide = next(p.name for p in phantoms if p.name.endswith("s0.4"))
    c = {v: runs[wide, v]["two_maxima"] for v in ("LBFGS_H", "LBFGS_GN", "LBFGS_GNH", "LBFGS_I")}
    ok_a = all(r >= 2 for r in a.values())
    ok_b = all(g <= n for g, n in b.values())
    ok_c = all(c.values())
    detail = (f"(a) {'ok' if ok_a else 'fails'} I/H residual ratios "
              + ", ".join(f"{k} {v:.2f}" for k, v in a.items())
              + f"; (b) {'ok' if ok_b else 'fails'} GNH vs GN iterations "
              + ", ".join(f"{k} {g}/{n}" for k, (g, n) in b.items())
              + f"; (c) {'ok' if ok_c else 'fails'} two maxima on {wide}")
    ok = record(7, "reconstruction suite", ok_a and ok_b and ok_c, detail, time.perf_counter() - t0, 1800)
    assert ok


def _csv_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_criterion_8_determinism(tmp_path):
    t0 = time.perf_counter()
    snapshots = []
    for k in range(2):
        out = tmp_path / f"run{k}"

        def run(sub, *argv):
            return cli(["--out", str(out / sub), "--seed", "11", *map(str, argv)])

        codes = [run("mesh", "mesh"), run("sim", "simulate", "--phantom", "two_r0.16_s0.4"),
                 run("rec", "reconstruct", "--data", out / "sim" / "data.csv"),
                 run("hess", "hessian-study"), run("bfgs", "bfgs-study"), run("suite", "suite")]
        assert codes == [0] * 6
        snapshots.append(_csv_bytes(out))
    same = snapshots[0] == snapshots[1]
    differ = sorted(k for k in snapshots[0] if snapshots[0][k] != snapshots[1].get(k))
    ok = record(8, "determinism", same, f"{len(snapshots[0])} CSV files compared, differing: {differ or 'none'}",
                time.perf_counter() - t0)
    assert ok
