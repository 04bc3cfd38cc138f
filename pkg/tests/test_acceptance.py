"""Exit criteria. Run with ``pytest tests/test_acceptance.py``; the terminal
summary prints one PASS/FAIL line per criterion."""

import csv
import time

import numpy as np
import pytest

from oracles import (dense_A, dense_ds, random_factor, random_maps, random_problem, rel,
                     windowed_ssim_reference)
from subdc import bench, cli, dc
from subdc.encoding import SubspaceEncoding
from subdc.metrics import nrmse, psnr, ssim
from subdc.phantom import PhantomConfig, phantom_frames
from subdc.subspace import TemporalBasis, field_nbytes
from subdc.trajectory import SamplingSchedule, golden_angle_spokes
from subdc.transform import GriddingPlan

pytestmark = pytest.mark.acceptance

PATHS = ("direct", "kernel", "toeplitz")


def _randn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# -- 1: normal-operator paths agree ---------------------------------------------

@pytest.mark.criterion(1)
def test_normal_paths_agree_ndft():
    t0 = time.perf_counter()
    worst = 0.0
    for draw in range(10):
        rng = np.random.default_rng(1000 + draw)
        T = int(rng.integers(4, 12))
        traj, sched, basis, maps = random_problem(rng, (16, 16), L=3, T=T, n_readouts=24,
                                                  n_samples=32, n_coils=int(rng.integers(1, 5)),
                                                  complex_phi=bool(draw % 2))
        ops = SubspaceEncoding(maps, traj, sched, basis)
        u = random_factor(rng, (16, 16), 3)
        outs = [ops.normal(u, p) for p in PATHS]
        for i in range(3):
            for j in range(i + 1, 3):
                worst = max(worst, rel(outs[i], outs[j]))
    elapsed = time.perf_counter() - t0
    print(f"worst pairwise rel err {worst:.3e}, {elapsed:.1f} s")
    assert worst <= 1e-9
    assert elapsed < 60


# -- 2: adjointness ---------------------------------------------------------------

@pytest.mark.criterion(2)
@pytest.mark.parametrize("exact, tol", [(True, 1e-12), (False, 1e-6)])
def test_adjointness(exact, tol):
    worst = 0.0
    for draw in range(20):
        rng = np.random.default_rng(2000 + draw)
        traj, sched, basis, maps = random_problem(rng, (16, 16), L=3, T=7, n_readouts=16,
                                                  n_samples=32, n_coils=3, complex_phi=True)
        ops = SubspaceEncoding(maps, traj, sched, basis,
                               plan=None if exact else GriddingPlan((16, 16)))
        u = random_factor(rng, (16, 16), 3)
        b = _randn(rng, ops.data_shape)
        au = ops.forward(u)
        err = abs(np.vdot(b, au) - np.vdot(ops.adjoint(b), u))
        worst = max(worst, err / (np.linalg.norm(au) * np.linalg.norm(b)))
    print(f"worst normalized adjoint mismatch {worst:.3e}")
    assert worst <= tol


# -- 3: solvers against dense constructions ------------------------------------------

@pytest.mark.criterion(3)
def test_solvers_match_dense_matrices():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3000)
    traj, sched, basis, maps = random_problem(rng, (8, 8), L=2, T=5, n_readouts=6,
                                              n_samples=8, n_coils=2, complex_phi=True)
    ops = SubspaceEncoding(maps, traj, sched, basis)
    a = dense_A(maps, traj.coords, sched.time_index, basis.phi)
    u = random_factor(rng, (8, 8), 2)
    b = _randn(rng, ops.data_shape)
    ahb = a.conj().T @ b.ravel()
    nrm = np.linalg.norm(a, 2) ** 2

    alpha = 0.7 / nrm
    want = u.ravel() - alpha * (a.conj().T @ (a @ u.ravel()) - ahb)
    errs = {"gd": rel(dc.gd_dc(u, b, dc.DCConfig(alpha=alpha), ops).ravel(), want)}

    lam = 0.1 * nrm
    want = np.linalg.solve(a.conj().T @ a + lam * np.eye(a.shape[1]), ahb + lam * u.ravel())
    errs["cg"] = rel(dc.cg_dc(u, b, dc.DCConfig(lam=lam, cg_iters=50), ops).ravel(), want)

    lam = 0.5 * nrm
    for residual in (True, False):
        got = dc.ds_dc(u, b, ops, dc.DCConfig(lam=lam), residual=residual)
        errs[f"ds residual={residual}"] = rel(got.ravel(), dense_ds(ops, u, b, lam, residual))
    elapsed = time.perf_counter() - t0
    print({k: f"{v:.2e}" for k, v in errs.items()}, f"{elapsed:.1f} s")
    assert max(errs.values()) <= 1e-6
    assert elapsed < 120


# -- 4: limits and fixed points ----------------------------------------------------

@pytest.fixture(scope="module")
def small_ndft():
    rng = np.random.default_rng(4000)
    traj, sched, basis, maps = random_problem(rng, (8, 8), L=2, T=5, n_readouts=8,
                                              n_samples=16, n_coils=2)
    ops = SubspaceEncoding(maps, traj, sched, basis)
    return ops, random_factor(rng, (8, 8), 2), _randn(rng, ops.data_shape)


@pytest.mark.criterion(4)
def test_limit_laws(small_ndft):
    ops, u, b = small_ndft
    nrm = dc.normal_norm(ops)
    pre = dc.build_ramp_preconditioner(ops.size)
    w2 = np.linalg.norm(ops.field.w, ord=2, axis=(-2, -1)).max()
    errs = {
        "gd alpha->0": rel(dc.gd_dc(u, b, dc.DCConfig(alpha=1e-9 / nrm), ops), u),
        "pgd alpha->0": rel(dc.pgd_dc(u, b, dc.DCConfig(alpha=1e-9 / nrm), pre, ops), u),
        "cg 0 iterations": rel(dc.cg_dc(u, b, dc.DCConfig(lam=1.0, cg_iters=0), ops), u),
        "cg lam->inf": rel(dc.cg_dc(u, b, dc.DCConfig(lam=1e8 * nrm, cg_iters=5), ops), u),
        "ds lam->inf": rel(dc.ds_dc(u, b, ops, dc.DCConfig(lam=1e8 * w2)), u),
    }
    print({k: f"{v:.2e}" for k, v in errs.items()})
    assert max(errs.values()) <= 1e-4


@pytest.mark.criterion(4)
def test_consistent_data_fixed_points(small_ndft):
    ops, u, _ = small_ndft
    b = ops.forward(u)
    nrm = dc.normal_norm(ops)
    pre = dc.build_ramp_preconditioner(ops.size)
    errs = {
        "gd": rel(dc.gd_dc(u, b, dc.DCConfig(alpha=1 / nrm), ops), u),
        "pgd": rel(dc.pgd_dc(u, b, dc.DCConfig(alpha=1 / nrm), pre, ops), u),
        "ds": rel(dc.ds_dc(u, b, ops, dc.DCConfig(lam=0.3 * nrm)), u),
        "cg": rel(dc.cg_dc(u, b, dc.DCConfig(lam=0.01 * nrm, cg_iters=5), ops), u),
    }
    print({k: f"{v:.2e}" for k, v in errs.items()})
    assert max(errs.values()) <= 1e-9


# -- 5: quality ordering on the default suite -------------------------------------------

@pytest.mark.criterion(5)
def test_default_suite_ordering(tmp_path):
    report = bench.run_benchmark(bench.BenchSuite(), tmp_path)
    print("\n" + report.table())
    prior = report.mean("prior")
    for m in ("gd", "pgd", "ds", "cg"):
        assert report.mean(m) < prior, m
    assert report.mean("cg") <= report.mean("ds")


# -- 6: timing ordering at 64x64 -----------------------------------------------------

@pytest.fixture(scope="module")
def timing_problem():
    suite = bench.BenchSuite(nx=64, ny=64, frames=50, readouts_per_frame=4, spokes=200,
                             samples=128, l_dim=4, coils=4, normal_path="direct")
    p = bench.build_problem(suite, 0)
    p.ops.field                                    # block field is setup, not per-apply
    return p


@pytest.mark.criterion(6)
def test_timing_ordering(timing_problem):
    p = timing_problem
    nrm = dc.normal_norm(p.ops)
    pre = dc.build_ramp_preconditioner(p.ops.size)
    fns = {
        "gd": lambda: dc.gd_dc(p.prior, p.b, dc.DCConfig(alpha=1 / nrm), p.ops),
        "pgd": lambda: dc.pgd_dc(p.prior, p.b, dc.DCConfig(alpha=1 / nrm), pre, p.ops),
        "ds": lambda: dc.ds_dc(p.prior, p.b, p.ops, dc.DCConfig(lam=0.3 * nrm)),
        "cg5": lambda: dc.cg_dc(p.prior, p.b, dc.DCConfig(lam=0.01 * nrm, cg_iters=5), p.ops),
    }
    t = {k: bench.median_time(f, min_reps=10, budget_s=np.inf) for k, f in fns.items()}
    t["admm20"] = bench.median_time(
        lambda: dc.reconstruct("admm", p.u0, p.b, p.ops, p.u0, admm_iters=20), min_reps=1,
        budget_s=np.inf)
    print({k: f"{v:.4f} s" for k, v in t.items()})
    assert 0.5 <= t["pgd"] / t["gd"] <= 2.0
    assert t["gd"] < t["cg5"] and t["pgd"] < t["cg5"]
    assert t["ds"] < t["cg5"]
    assert 10 * t["gd"] <= t["admm20"]


# -- 7: memory --------------------------------------------------------------------------

def _long_schedule_problem(T, seed=7000):
    rng = np.random.default_rng(seed)
    n, L, R = 16, 3, 24
    t = np.linspace(0, T - 1, R).round().astype(int)
    phi = np.linalg.qr(rng.standard_normal((T, L)))[0].T
    ops = SubspaceEncoding(random_maps(rng, 2, (n, n)), golden_angle_spokes(R, 32),
                           SamplingSchedule(t, T), TemporalBasis(phi), plan=GriddingPlan((n, n)))
    ops.build_kernels(("kernel",))
    u = random_factor(rng, (n, n), L)
    return ops, u, ops.forward(random_factor(rng, (n, n), L))


@pytest.mark.criterion(7)
def test_kernel_path_memory():
    T_small, T_big = 16, 200_000
    small, big = _long_schedule_problem(T_small), _long_schedule_problem(T_big)
    solves = {
        "gd": lambda o, u, b: dc.gd_dc(u, b, dc.DCConfig(alpha=1e-3, normal_path="kernel"), o),
        "cg": lambda o, u, b: dc.cg_dc(u, b, dc.DCConfig(lam=1.0, cg_iters=5,
                                                         normal_path="kernel"), o),
    }
    for name, f in solves.items():
        f(*small), f(*big)                         # warm caches
        growth = (bench.track_peak_alloc(lambda: f(*big))[1]
                  - bench.track_peak_alloc(lambda: f(*small))[1])
        print(f"{name}: peak growth {growth} bytes from T={T_small} to T={T_big}")
        # any array with a T-length axis would add at least T_big bytes
        assert growth < T_big, name
    ops = SubspaceEncoding(np.ones((1, 32, 24)), golden_angle_spokes(24, 32),
                           SamplingSchedule(np.arange(24) % 6, 6),
                           TemporalBasis(np.linalg.qr(np.random.default_rng(0)
                                                      .standard_normal((6, 4)))[0].T))
    w = ops.field.w
    assert w.size == 4 * 32 * 24 * 4 ** 2
    assert w.nbytes == field_nbytes((32, 24), 4)


# -- 8: preconditioning ------------------------------------------------------------------

def _repeat(step, u, n=10):
    for _ in range(n):
        u = step(u)
    return u


@pytest.mark.criterion(8)
def test_pgd_beats_gd_after_ten_steps():
    suite = bench.BenchSuite()
    val, test = bench.build_problem(suite, 100), bench.build_problem(suite, 0)
    pre = dc.build_ramp_preconditioner(val.ops.size)
    path = suite.normal_path
    runs = {
        "gd": (lambda a, p: _repeat(
            lambda u: dc.gd_dc(u, p.b, dc.DCConfig(alpha=a, normal_path=path), p.ops), p.prior),
            dc.alpha_grid(dc.normal_norm(val.ops, path), 16)),
        "pgd": (lambda a, p: _repeat(
            lambda u: dc.pgd_dc(u, p.b, dc.DCConfig(alpha=a, normal_path=path), pre, p.ops),
            p.prior), dc.alpha_grid(dc.preconditioned_norm(val.ops, pre, path), 16)),
    }
    score = lambda u, p: dc.data_residual(u, p.b, p.ops)
    res = {}
    for name, (run, grid) in runs.items():
        alpha, _ = dc.tune(run, grid, [val], score)
        res[name] = score(run(alpha, test), test)
    print(f"start {score(test.prior, test):.3f}, residual after 10 steps {res}")
    assert res["pgd"] < res["gd"]


# -- 9: metric identities ------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_metric_identities():
    rng = np.random.default_rng(9000)
    ref = _randn(rng, (24, 24))
    assert nrmse(ref, ref) == 0
    assert psnr(ref, ref) == np.inf
    assert ssim(ref, ref) == pytest.approx(1.0, abs=1e-12)
    # MSE of 0.01 at unit peak is 20 dB
    r = np.zeros(64)
    r[0] = 1.0
    assert psnr(r + 0.1, r) == pytest.approx(20.0, abs=1e-9)


@pytest.mark.criterion(9)
def test_ssim_matches_windowed_reference():
    ref = np.abs(phantom_frames(PhantomConfig(size=(48, 48), n_frames=1))[..., 0])
    rng = np.random.default_rng(9001)
    for level in (0.02, 0.1, 0.3):
        noisy = ref + level * ref.max() * rng.standard_normal(ref.shape)
        got, want = ssim(noisy, ref), windowed_ssim_reference(noisy, ref, ref.max())
        assert abs(got - want) <= 1e-6, level


# -- 10: determinism ----------------------------------------------------------------------

SMALL_SUITE = """\
nx = 16
ny = 16
frames = 8
l_dim = 3
coils = 2
spokes = 24
samples = 32
methods = zf, prior, gd, pgd, ds, cg, admm
admm_iters = 5
seeds = 0, 1
val_seeds = 50
timing_reps = 2
"""


def _numeric_content(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    drop = {bench.CSV_HEADER.index("wall_time_s"), bench.CSV_HEADER.index("peak_alloc_bytes")}
    return [[v for i, v in enumerate(r) if i not in drop] for r in rows]


@pytest.mark.criterion(10)
def test_bench_is_deterministic(tmp_path, capsys):
    (tmp_path / "suite.txt").write_text(SMALL_SUITE)
    for run in ("a", "b"):
        assert cli.run(["bench", "--suite", str(tmp_path / "suite.txt"),
                        "--out", str(tmp_path / run)]) == 0
    a = _numeric_content(tmp_path / "a" / "metrics.csv")
    b = _numeric_content(tmp_path / "b" / "metrics.csv")
    assert len(a) == 1 + 2 * 7 * 2
    assert a == b
    assert ((tmp_path / "a" / "params.csv").read_bytes()
            == (tmp_path / "b" / "params.csv").read_bytes())
