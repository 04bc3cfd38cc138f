import subprocess
import sys

import numpy as np
import pytest

from subdc import cli, dc
from subdc.bench import dictionary_basis
from subdc.encoding import SubspaceEncoding
from subdc.metrics import nrmse
from subdc.phantom import (PhantomConfig, make_coil_maps, phantom_frames, project,
                           simulate_acquisition)
from subdc.tensorio import encode_tensor, read_tensor, write_tensor
from subdc.trajectory import area_density_weights, golden_angle_spokes, linear_schedule
from subdc.transform import GriddingPlan

SIM = ["--spokes", "48", "--samples", "32", "--readouts-per-frame", "3",
       "--noise-sigma", "0.01", "--seed", "5"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    assert cli.run(["phantom", "--out", str(d), "--nx", "16", "--ny", "16", "--frames", "16",
                    "--seed", "2"]) == 0
    assert cli.run(["basis", "--out", str(d), "--l-dim", "3"]) == 0
    assert cli.run(["sim", "--out", str(d)] + SIM) == 0
    return d


def test_pipeline_files(workdir):
    for name in ("x", "phi", "u_true", "maps", "traj", "schedule", "kspace"):
        assert (workdir / f"{name}.ncs").is_file()
    assert read_tensor(workdir / "kspace.ncs").shape == (4, 48, 32)
    assert read_tensor(workdir / "phi.ncs").shape == (3, 16)


def test_cli_matches_library(workdir, capsys):
    # the same experiment through the library
    x = phantom_frames(PhantomConfig(size=(16, 16), n_frames=16, seed=2))
    basis = dictionary_basis(16, 0.1, 3)
    u_true = project(x, basis)
    maps = make_coil_maps(4, (16, 16))
    traj, sched = golden_angle_spokes(48, 32), linear_schedule(48, 3)
    b = simulate_acquisition(x, maps, traj, sched, 0.01, seed=5)
    ops = SubspaceEncoding(maps, traj, sched, basis, plan=GriddingPlan((16, 16)))
    u0 = dc.zero_filled_init(b, ops, area_density_weights(traj, sched))
    lam = 0.3 * dc.normal_norm(ops)
    u = dc.ds_dc(u0, b, ops, dc.DCConfig(lam=lam))
    want = nrmse(u, u_true)

    assert cli.run(["recon", "--out", str(workdir), "--method", "ds", "--lambda", repr(lam)]) == 0
    capsys.readouterr()
    assert cli.run(["metrics", "--recon", str(workdir / "u_ds.ncs"),
                    "--ref", str(workdir / "u_true.ncs")]) == 0
    printed = dict(line.split() for line in capsys.readouterr().out.strip().splitlines())
    assert abs(float(printed["nrmse"]) - want) <= 1e-12 * want
    assert want < nrmse(u0, u_true)


def test_gd_zero_step_passthrough(workdir, tmp_path):
    rng = np.random.default_rng(0)
    prior = rng.standard_normal((16, 16, 3)) + 1j * rng.standard_normal((16, 16, 3))
    write_tensor(tmp_path / "p.ncs", prior)
    out = tmp_path / "o"
    assert cli.run(["recon", "--data", str(workdir), "--out", str(out), "--method", "gd",
                    "--alpha", "0", "--prior", str(tmp_path / "p.ncs")]) == 0
    assert (out / "u_gd.ncs").read_bytes() == (tmp_path / "p.ncs").read_bytes()


def test_cg_zero_iterations(workdir, tmp_path):
    rng = np.random.default_rng(1)
    prior = rng.standard_normal((16, 16, 3)) + 1j * rng.standard_normal((16, 16, 3))
    write_tensor(tmp_path / "p.ncs", prior)
    assert cli.run(["recon", "--data", str(workdir), "--out", str(tmp_path), "--method", "cg",
                    "--cg-iters", "0", "--prior", str(tmp_path / "p.ncs")]) == 0
    np.testing.assert_array_equal(read_tensor(tmp_path / "u_cg.ncs"), prior)


@pytest.mark.parametrize("method", ["zf", "gd", "pgd", "ds", "cg"])
@pytest.mark.parametrize("prior", ["copy-init", "smooth-init"])
def test_methods_and_builtin_priors(workdir, tmp_path, method, prior):
    assert cli.run(["recon", "--data", str(workdir), "--out", str(tmp_path), "--method", method,
                    "--prior", prior, "--normal-path", "toeplitz"]) == 0
    u = read_tensor(tmp_path / f"u_{method}.ncs")
    assert u.shape == (16, 16, 3) and np.all(np.isfinite(u))


def test_exact_ndft_flag(workdir, tmp_path):
    args = ["recon", "--data", str(workdir), "--method", "cg", "--lambda", "10"]
    assert cli.run(args + ["--out", str(tmp_path / "a"), "--exact-ndft"]) == 0
    assert cli.run(args + ["--out", str(tmp_path / "b")]) == 0
    a = read_tensor(tmp_path / "a" / "u_cg.ncs")
    b = read_tensor(tmp_path / "b" / "u_cg.ncs")
    assert 0 < np.linalg.norm(a - b) / np.linalg.norm(a) < 1e-2


@pytest.mark.parametrize("argv", [
    [],
    ["recon", "--out", "x"],
    ["recon", "--out", "x", "--method", "unet"],
    ["phantom", "--out", "x", "--bogus"],
    ["phantom", "--out", "x", "--threads", "0"],
    ["frobnicate"],
])
def test_usage_errors(argv, capsys):
    assert cli.run(argv) == 1


def test_data_errors(workdir, tmp_path):
    assert cli.run(["recon", "--out", str(tmp_path), "--method", "zf"]) == 2
    # prior with the wrong shape
    write_tensor(tmp_path / "bad.ncs", np.zeros((8, 8, 3), complex))
    assert cli.run(["recon", "--data", str(workdir), "--out", str(tmp_path), "--method", "gd",
                    "--prior", str(tmp_path / "bad.ncs")]) == 2
    # schedule referencing frames the basis does not have
    d = tmp_path / "incons"
    d.mkdir()
    for name in ("phi", "maps", "traj", "kspace"):
        (d / f"{name}.ncs").write_bytes((workdir / f"{name}.ncs").read_bytes())
    write_tensor(d / "schedule.ncs", np.full(48, 40.0))
    assert cli.run(["recon", "--data", str(d), "--out", str(d), "--method", "zf"]) == 2
    # corrupt container
    (d / "schedule.ncs").write_bytes(b"XXXX" + encode_tensor(np.zeros(48))[4:])
    assert cli.run(["recon", "--data", str(d), "--out", str(d), "--method", "zf"]) == 2
    # frames that the spoke count cannot fill
    assert cli.run(["sim", "--data", str(workdir), "--out", str(tmp_path), "--spokes", "10"]) == 2


def test_numerical_failure(workdir, tmp_path):
    prior = np.full((16, 16, 3), np.nan, complex)
    write_tensor(tmp_path / "nan.ncs", prior)
    assert cli.run(["recon", "--data", str(workdir), "--out", str(tmp_path), "--method", "gd",
                    "--alpha", "1e-4", "--prior", str(tmp_path / "nan.ncs")]) == 3


def test_metrics_csv(workdir, tmp_path, capsys):
    assert cli.run(["metrics", "--recon", str(workdir / "u_true.ncs"),
                    "--ref", str(workdir / "u_true.ncs"), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "nrmse 0" in out and "psnr_db inf" in out
    assert (tmp_path / "metrics.csv").read_text().splitlines()[1].startswith("0,inf,")


def test_bench_command(tmp_path, capsys):
    suite = tmp_path / "suite.txt"
    suite.write_text("nx = 16\nny = 16\nframes = 8\nl_dim = 3\nspokes = 24\nsamples = 32\n"
                     "methods = zf, prior, gd\nseeds = 0\nval_seeds = 9\ntiming_reps = 1\n")
    assert cli.run(["bench", "--out", str(tmp_path / "b"), "--suite", str(suite),
                    "--threads", "1"]) == 0
    assert "| gd |" in capsys.readouterr().out
    assert (tmp_path / "b" / "metrics.csv").is_file()


def test_module_entry_point():
    ok = subprocess.run([sys.executable, "-m", "subdc", "--help"], capture_output=True)
    assert ok.returncode == 0 and b"phantom" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "subdc", "sim", "--nope"], capture_output=True)
    assert bad.returncode == 1
