import json

import numpy as np
import pytest

from pteit.errors import CapExceeded, ConfigError
from pteit.fem import ForwardModel
from pteit.lab import (Inclusion, LabConfig, NoiseSpec, Phantom, add_noise, rasterize_phantom,
                       reconstruction_phantoms, run_bfgs_quality_study, run_hessian_accuracy_study,
                       single_inclusion, two_inclusions)
from pteit.lab.phantom import profile_peaks, separated_peaks, slice_profile, valley_depth
from pteit.lab.report import ExperimentReport, read_csv
from pteit.lab.studies import flattens


def test_empty_phantom(mesh256):
    np.testing.assert_array_equal(rasterize_phantom(Phantom(sigma0=1.7), mesh256), 1.7)


def test_covering_inclusion(mesh256):
    ph = Phantom((Inclusion((0.0, 0.0), 2.0, 4.0),))
    np.testing.assert_array_equal(rasterize_phantom(ph, mesh256), 4.0)


def test_inclusion_area_fraction(mesh256):
    m = rasterize_phantom(single_inclusion(), mesh256)
    frac = np.mean(m == 2.3)
    assert abs(frac - 0.0625) <= 0.3 * 0.0625


def test_later_inclusion_wins(mesh256):
    ph = Phantom((Inclusion((0.0, 0.0), 0.5, 2.0), Inclusion((0.0, 0.0), 0.25, 3.0)))
    m = rasterize_phantom(ph, mesh256)
    assert m[mesh256.locate([[0.0, 0.05]])[0]] == 3.0


@pytest.mark.parametrize("bad", [dict(sigma0=0.0), dict(inclusions=(Inclusion((0, 0), 0.1, -1.0),))])
def test_invalid_phantom(bad):
    with pytest.raises(ConfigError):
        Phantom(**bad)


def test_two_inclusion_geometry():
    ph = two_inclusions(0.16, 0.4)
    c1, c2 = (np.array(i.center) for i in ph.inclusions)
    assert np.linalg.norm(c1) == pytest.approx(0.4)
    np.testing.assert_allclose(c1, -c2)
    assert c1[0] == pytest.approx(c1[1])
    assert [i.sigma for i in ph.inclusions] == [2.0, 3.0]
    assert len(reconstruction_phantoms()) == 4


def test_noise_infinite_snr():
    d = np.linspace(-1, 1, 50)
    np.testing.assert_array_equal(add_noise(d, NoiseSpec(np.inf)), d)


def test_noise_level():
    d = np.sin(np.arange(240.0))
    ratios = [np.linalg.norm(add_noise(d, NoiseSpec(50, s)) - d) / np.linalg.norm(d) for s in range(20)]
    assert abs(np.mean(ratios) - 1 / 50) <= 0.1 / 50


def test_noise_deterministic():
    d = np.arange(10.0)
    assert add_noise(d, NoiseSpec(50, 3)).tobytes() == add_noise(d, NoiseSpec(50, 3)).tobytes()
    with pytest.raises(ConfigError):
        NoiseSpec(snr=0)


def test_profile_helpers():
    v = np.array([0, 1, 2, 2, 1, 0.5, 1, 3, 1, 0])
    peaks = profile_peaks(v)
    assert [p[1] for p in peaks] == [2.0, 3.0]
    assert valley_depth(v) == pytest.approx(0.75)
    t = np.linspace(-1, 1, len(v))
    assert separated_peaks(t, v)
    assert not separated_peaks(t, np.array([0, 1, 2, 1, 0, 0, 0, 0, 0, 0.0]))


def test_slice_profile(mesh256):
    m = rasterize_phantom(two_inclusions(0.25, 0.4), mesh256)
    t, v = slice_profile(mesh256, m)
    assert separated_peaks(t, v)


def test_config_keys(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"lambda": 1e-4, "n_rings": 5, "variant": "GN", "seed": 9}))
    cfg = LabConfig.load(path)
    assert cfg.lam == 1e-4 and cfg.n_rings == 5 and cfg.variant == "GN"
    assert set(cfg.to_dict()) == {"radius", "n_rings", "n_electrodes", "electrode_coverage", "contact_impedance",
                                  "lambda", "snr", "seed", "variant", "lbfgs_memory", "stagnation_tol",
                                  "dedupe_reciprocal", "skip_driven", "freeze_h0", "neumann_const_alt"}
    for bad in ({"lam": 1.0}, {"variant": "X"}, {"snr": -1}, {"bogus": 1}):
        with pytest.raises(ConfigError):
            LabConfig.from_dict(bad)


def test_inverse_crime_guard():
    recon, sim = LabConfig().meshes(4)
    assert recon.hash != sim.hash
    assert sim.n_elems == 4 * recon.n_elems


def test_report_manifest(tmp_path):
    rep = ExperimentReport("x", {}, tmp_path)
    (tmp_path / "a.csv").write_text("a\n")
    rep.add(tmp_path / "a.csv")
    rep.write()
    rep.files.append("missing.csv")
    with pytest.raises(FileNotFoundError):
        rep.validate()


def test_flattening_rule():
    s = np.linspace(0.5, 5, 19)
    assert flattens(s, 1 - 1 / s)
    assert not flattens(s, s)


@pytest.fixture(scope="module")
def hessian_report(tmp_path_factory):
    return run_hessian_accuracy_study(LabConfig(), tmp_path_factory.mktemp("hess"))


def test_hessian_study_outputs(hessian_report):
    out = hessian_report.out_dir
    assert [f for f in hessian_report.files if f.endswith(".csv")] == ["hessian_diag.csv", "saturation.csv"]
    rows = read_csv(out / "hessian_diag.csv")
    assert len(rows) == 256
    assert {"element", "x", "y", "approx", "approx_freespace", "true"} <= set(rows[0])
    assert (out / "report.json").exists()


def test_hessian_study_saturation_shape(hessian_report):
    rows = read_csv(hessian_report.out_dir / "saturation.csv")
    for el in hessian_report.metrics["tracked_elements"]:
        sel = [r for r in rows if int(r["element"]) == el]
        s = np.array([float(r["sigma"]) for r in sel])
        for col in ("true", "approx"):
            v = np.array([float(r[col]) for r in sel])
            assert flattens(s, v)
            below, above = np.diff(v[s <= 1]), np.diff(v[s >= 1])
            assert np.all(below >= 0) or np.all(below <= 0)
            assert np.all(above >= 0) or np.all(above <= 0)


def test_hessian_study_disc_beats_freespace(hessian_report):
    m = hessian_report.metrics
    assert m["corr_disc"] >= 0.9
    assert m["corr_disc"] > m["corr_freespace"]


@pytest.fixture(scope="module")
def bfgs_report(tmp_path_factory):
    return run_bfgs_quality_study(LabConfig(), tmp_path_factory.mktemp("bfgs"), n_iter=6)


def test_bfgs_study_outputs(bfgs_report):
    out = bfgs_report.out_dir
    errs = read_csv(out / "bfgs_errors.csv")
    assert len(errs) == 7
    angles = read_csv(out / "bfgs_angles.csv")
    assert len([k for k in angles[0] if k.startswith("angle_")]) == 20


def test_bfgs_study_iteration_zero_is_initial_diagonal(tmp_path):
    from pteit import adjoint
    from pteit.lab.studies import simulate
    from pteit.optim import LaplaceReg, hessian_metrics, reconstruct

    cfg = LabConfig()
    recon, sim = cfg.meshes(4)
    model = cfg.model(recon)
    d = simulate(cfg, single_inclusion(), cfg.model(sim), noise=False)
    run = reconstruct(model, d, cfg.solver("LBFGS_GN", max_iter=1, track_dense=True, lbfgs_memory=None,
                                           stagnation_tol=0.0))
    H = adjoint.true_hessian(model, run.iterates[0], d)[0] + LaplaceReg.on(recon, cfg.lam).hessian.toarray()
    e0, _ = hessian_metrics([np.diag(run.h0[0])], H)
    e, _ = hessian_metrics(run.B_history[:1], H)
    assert e[0] == e0[0]


def test_bfgs_study_cap(tmp_path):
    with pytest.raises(CapExceeded):
        run_bfgs_quality_study(LabConfig(n_rings=6), tmp_path, n_iter=1)


def test_simulated_data_distinct_mesh():
    cfg = LabConfig()
    recon, sim = cfg.meshes(7)
    d = ForwardModel(sim)(rasterize_phantom(single_inclusion(), sim))
    assert d.shape == (240,) and recon.hash != sim.hash
