"""Desk-scale benchmark: simulate, reconstruct with every method, score, report.

A suite is a small ``key = value`` text file (``#`` starts a comment)::

    nx = 32
    frames = 32
    methods = zf, prior, gd, pgd, ds, cg
    seeds = 0, 1, 2

See :class:`BenchSuite` for all keys and their defaults.
"""

from __future__ import annotations

import csv
import logging
import os
import time
import tracemalloc
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import dc
from .encoding import SubspaceEncoding
from .metrics import nrmse, psnr, ssim, ssim_frames
from .phantom import (PhantomConfig, frames_from_factor, make_coil_maps, noisy_prior,
                      phantom_frames, project, simulate_acquisition)
from .subspace import TemporalBasis, basis_from_dictionary, ir_dictionary
from .trajectory import area_density_weights, golden_angle_spokes, linear_schedule
from .transform import GriddingPlan

log = logging.getLogger(__name__)

CSV_HEADER = ["method", "target", "seed", "nrmse", "psnr_db", "ssim", "wall_time_s",
              "peak_alloc_bytes"]
METHODS = ("zf", "prior", "gd", "pgd", "ds", "cg", "admm")


def track_peak_alloc(fn: Callable[[], object]) -> tuple[object, int]:
    """Run ``fn`` and return ``(result, peak traced bytes above the start)``.

    numpy reports its buffers to :mod:`tracemalloc`, so the peak covers every
    array allocated while ``fn`` runs.
    """
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base, _ = tracemalloc.get_traced_memory()
    try:
        out = fn()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        if not was_tracing:
            tracemalloc.stop()
    return out, max(0, peak - base)


def median_time(fn: Callable[[], object], min_reps: int = 5, budget_s: float = 1.0) -> float:
    """Median wall time of ``fn`` on a monotonic clock.

    Calls that take longer than ``budget_s`` are timed once.
    """
    times = []
    while True:
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
        if len(times) >= min_reps or times[0] > budget_s:
            break
    return float(np.median(times))


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(",", " ").split())


def _strs(s: str) -> tuple[str, ...]:
    return tuple(v for v in s.replace(",", " ").split())


@dataclass(frozen=True)
class BenchSuite:
    nx: int = 32
    ny: int = 32
    frames: int = 32
    l_dim: int = 4
    coils: int = 4
    spokes: int = 96
    samples: int = 64
    readouts_per_frame: int = 3
    noise_sigma: float = 0.01
    prior: str = "noisy"              # noisy | copy-init | smooth-init
    prior_snr: float = 10.0
    smooth_sigma: float = 1.0
    tr: float = 0.1
    normal_path: str = "kernel"
    cg_iters: int = 5
    admm_iters: int = 20
    admm_lambda: float = 1e-3
    methods: tuple[str, ...] = ("zf", "prior", "gd", "pgd", "ds", "cg")
    seeds: tuple[int, ...] = (0, 1, 2)
    val_seeds: tuple[int, ...] = (100, 101)
    eval_frames: tuple[int, ...] = ()
    timing_reps: int = 5
    track_alloc: bool = True
    error_maps: bool = True

    def __post_init__(self):
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; known: {METHODS}")
        if self.prior not in ("noisy", "copy-init", "smooth-init"):
            raise ValueError(f"unknown prior generator {self.prior!r}")

    @classmethod
    def from_text(cls, text: str) -> "BenchSuite":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key = value")
            key, value = (p.strip() for p in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            kind = types[key]
            if kind == "int":
                kwargs[key] = int(value)
            elif kind == "float":
                kwargs[key] = float(value)
            elif kind == "bool":
                kwargs[key] = value.lower() in ("1", "true", "yes", "on")
            elif kind == "str":
                kwargs[key] = value
            elif key in ("methods",):
                kwargs[key] = _strs(value)
            else:
                kwargs[key] = _ints(value)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "BenchSuite":
        return cls.from_text(Path(path).read_text())


@dataclass
class Problem:
    """One simulated acquisition plus everything the solvers need."""

    seed: int
    x: np.ndarray
    basis: TemporalBasis
    u_true: np.ndarray
    maps: np.ndarray
    b: np.ndarray
    ops: SubspaceEncoding
    dweights: np.ndarray
    u0: np.ndarray
    prior: np.ndarray


def dictionary_basis(n_frames: int, tr: float, rank: int) -> TemporalBasis:
    """Inversion-recovery basis over T1 in [0.1, 3] s."""
    tau = np.arange(n_frames) * tr
    return basis_from_dictionary(ir_dictionary(np.linspace(0.1, 3.0, 200), tau), rank)


def smooth_prior(u0: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian blur of each subspace channel (real and imaginary parts)."""
    return (gaussian_filter(u0.real, sigma=(sigma, sigma, 0))
            + 1j * gaussian_filter(u0.imag, sigma=(sigma, sigma, 0)))


def make_prior(kind: str, u0: np.ndarray, u_true: np.ndarray, snr: float,
               smooth_sigma: float, seed: int) -> np.ndarray:
    if kind == "noisy":
        return noisy_prior(u_true, snr, seed)
    if kind == "copy-init":
        return u0.copy()
    if kind == "smooth-init":
        return smooth_prior(u0, smooth_sigma)
    raise ValueError(f"unknown prior generator {kind!r}")


def build_problem(suite: BenchSuite, seed: int) -> Problem:
    size = (suite.nx, suite.ny)
    x = phantom_frames(PhantomConfig(size=size, n_frames=suite.frames, tr=suite.tr, seed=seed))
    basis = dictionary_basis(suite.frames, suite.tr, suite.l_dim)
    maps = make_coil_maps(suite.coils, size)
    traj = golden_angle_spokes(suite.spokes, suite.samples)
    sched = linear_schedule(suite.spokes, suite.readouts_per_frame)
    if sched.n_frames != suite.frames:
        raise ValueError(f"{suite.spokes} spokes at {suite.readouts_per_frame} per frame give "
                         f"{sched.n_frames} frames, suite says {suite.frames}")
    b = simulate_acquisition(x, maps, traj, sched, suite.noise_sigma, exact=True, seed=seed)
    ops = SubspaceEncoding(maps, traj, sched, basis, plan=GriddingPlan(size))
    dw = area_density_weights(traj, sched)
    u_true = project(x, basis)
    u0 = dc.zero_filled_init(b, ops, dw)
    prior = make_prior(suite.prior, u0, u_true, suite.prior_snr, suite.smooth_sigma,
                       seed + 10_000)
    return Problem(seed, x, basis, u_true, maps, b, ops, dw, u0, prior)


@dataclass
class MetricsRow:
    method: str
    target: str
    seed: int
    nrmse: float
    psnr_db: float
    ssim: float
    wall_time_s: float
    peak_alloc_bytes: int

    def as_csv(self) -> list[str]:
        return [self.method, self.target, str(self.seed), f"{self.nrmse:.17g}",
                f"{self.psnr_db:.17g}", f"{self.ssim:.17g}", f"{self.wall_time_s:.6g}",
                str(self.peak_alloc_bytes)]


@dataclass
class MetricsReport:
    rows: list[MetricsRow] = field(default_factory=list)
    params: dict[str, float] = field(default_factory=dict)
    setup_times: dict[str, float] = field(default_factory=dict)

    def values(self, method: str, target: str, metric: str) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.rows
                         if r.method == method and r.target == target])

    def mean(self, method: str, target: str = "factor", metric: str = "nrmse") -> float:
        return float(np.mean(self.values(method, target, metric)))

    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow(r.as_csv())

    def table(self) -> str:
        """Summary in ``mean (std)`` form, one line per method."""
        head = ("| method | NRMSE U | PSNR frames (dB) | SSIM frames | NRMSE frames | time (s) |\n"
                "|---|---|---|---|---|---|")
        lines = [head]

        def ms(method, target, metric, fmt):
            v = self.values(method, target, metric)
            return f"{fmt.format(np.mean(v))} ({fmt.format(np.std(v))})"

        for m in self.methods():
            lines.append(
                f"| {m} | {ms(m, 'factor', 'nrmse', '{:.4f}')} "
                f"| {ms(m, 'frames', 'psnr_db', '{:.2f}')} "
                f"| {ms(m, 'frames', 'ssim', '{:.3f}')} "
                f"| {ms(m, 'frames', 'nrmse', '{:.4f}')} "
                f"| {np.median(self.values(m, 'factor', 'wall_time_s')):.3g} |")
        return "\n".join(lines)


def factor_metrics(u: np.ndarray, ref: np.ndarray) -> tuple[float, float, float]:
    s = float(np.mean([ssim(u[..., k], ref[..., k]) for k in range(ref.shape[-1])])) \
        if min(ref.shape[:2]) >= 11 else float("nan")
    return nrmse(u, ref), psnr(u, ref), s


def frame_metrics(u: np.ndarray, ref_u: np.ndarray, basis: TemporalBasis,
                  frames: np.ndarray) -> tuple[float, float, float]:
    test = np.abs(frames_from_factor(u, basis, frames))
    ref = np.abs(frames_from_factor(ref_u, basis, frames))
    s = ssim_frames(test, ref) if min(ref.shape[:2]) >= 11 else float("nan")
    return nrmse(test, ref), psnr(test, ref), s


def save_error_map(path: str | os.PathLike, u: np.ndarray, ref_u: np.ndarray,
                   basis: TemporalBasis, frames: np.ndarray) -> None:
    """8-bit grayscale PNG of ``| |recon| - |ref| |`` per frame, tiled left to right,
    window ``[0, 0.5 max|ref|]``."""
    test = np.abs(frames_from_factor(u, basis, frames))
    ref = np.abs(frames_from_factor(ref_u, basis, frames))
    err = np.abs(test - ref)
    top = 0.5 * ref.max()
    img = np.clip(err / top, 0, 1) if top > 0 else np.zeros_like(err)
    tiles = np.concatenate([img[..., k] for k in range(img.shape[-1])], axis=1)
    Image.fromarray(np.round(255 * tiles.T).astype(np.uint8), mode="L").save(path)


class Runner:
    """Builds a solver callable per method with tuned parameters."""

    def __init__(self, suite: BenchSuite):
        self.suite = suite
        self.params: dict[str, float] = {}

    def _cfg(self, **kw) -> dc.DCConfig:
        return dc.DCConfig(normal_path=self.suite.normal_path, cg_iters=self.suite.cg_iters, **kw)

    def tune(self, problems: list[Problem]) -> dict[str, float]:
        score = lambda u, p: nrmse(u, p.u_true)
        methods = self.suite.methods
        ref = problems[0].ops
        if "gd" in methods or "cg" in methods or "ds" in methods:
            norm = dc.normal_norm(ref, self.suite.normal_path)
            self.params["normal_norm"] = norm
        if "gd" in methods:
            self.params["gd_alpha"], _ = dc.tune(
                lambda a, p: dc.gd_dc(p.prior, p.b, self._cfg(alpha=a), p.ops),
                dc.alpha_grid(norm), problems, score)
        if "pgd" in methods:
            precond = dc.build_ramp_preconditioner(ref.size)
            pnorm = dc.preconditioned_norm(ref, precond, self.suite.normal_path)
            self.params["pgd_alpha"], _ = dc.tune(
                lambda a, p: dc.pgd_dc(p.prior, p.b, self._cfg(alpha=a), precond, p.ops),
                dc.alpha_grid(pnorm), problems, score)
        if "ds" in methods:
            self.params["ds_lambda"], _ = dc.tune(
                lambda lam, p: dc.ds_dc(p.prior, p.b, p.ops, self._cfg(lam=lam)),
                dc.lambda_grid(norm, 13), problems, score)
        if "cg" in methods:
            self.params["cg_lambda"], _ = dc.tune(
                lambda lam, p: dc.cg_dc(p.prior, p.b, self._cfg(lam=lam), p.ops),
                dc.lambda_grid(norm, 13), problems, score)
        return self.params

    def solver(self, method: str, p: Problem) -> Callable[[], np.ndarray]:
        s = self.suite
        if method == "zf":
            return lambda: dc.zero_filled_init(p.b, p.ops, p.dweights)
        if method == "prior":
            return lambda: p.prior
        if method == "gd":
            cfg = self._cfg(alpha=self.params["gd_alpha"])
            return lambda: dc.gd_dc(p.prior, p.b, cfg, p.ops)
        if method == "pgd":
            cfg = self._cfg(alpha=self.params["pgd_alpha"])
            precond = dc.build_ramp_preconditioner(p.ops.size)
            return lambda: dc.pgd_dc(p.prior, p.b, cfg, precond, p.ops)
        if method == "ds":
            cfg = self._cfg(lam=self.params["ds_lambda"])
            return lambda: dc.ds_dc(p.prior, p.b, p.ops, cfg)
        if method == "cg":
            cfg = self._cfg(lam=self.params["cg_lambda"])
            return lambda: dc.cg_dc(p.prior, p.b, cfg, p.ops)
        if method == "admm":
            return lambda: dc.reconstruct("admm", p.u0, p.b, p.ops, p.u0, lam=s.admm_lambda,
                                          admm_iters=s.admm_iters, normal_path=s.normal_path)
        raise ValueError(f"unknown method {method!r}")


def run_benchmark(suite: BenchSuite, out_dir: str | os.PathLike) -> MetricsReport:
    """Run every method of ``suite`` on every seed and write the reports.

    Writes ``metrics.csv``, ``table.md``, ``params.csv``, ``setup.csv`` and,
    for the first seed, ``errmap_<method>.png`` into ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(suite)
    report = MetricsReport()

    t0 = time.perf_counter()
    val = [build_problem(suite, s) for s in suite.val_seeds]
    for p in val:
        p.ops.build_kernels(("kernel", "toeplitz") if suite.normal_path != "direct" or
                            "ds" in suite.methods else ())
    if val:
        runner.tune(val)
    elif set(suite.methods) & {"gd", "pgd", "ds", "cg"}:
        raise ValueError("tuning needs at least one validation seed")
    report.params = dict(runner.params)
    report.setup_times["tuning"] = time.perf_counter() - t0
    log.info("tuned parameters: %s", report.params)

    frames_sel = np.asarray(suite.eval_frames or range(suite.frames))
    for seed in suite.seeds:
        p = build_problem(suite, seed)
        t1 = time.perf_counter()
        if "ds" in suite.methods or suite.normal_path == "toeplitz":
            p.ops.field
        report.setup_times[f"kernel_field_seed{seed}"] = time.perf_counter() - t1
        if suite.normal_path == "kernel":
            p.ops.kernels
        for method in suite.methods:
            try:
                fn = runner.solver(method, p)
                u = fn()
                wall = median_time(fn, suite.timing_reps) if method != "prior" else 0.0
                peak = track_peak_alloc(fn)[1] if suite.track_alloc and method != "prior" else 0
            except Exception as exc:
                raise RuntimeError(f"method {method!r} failed on seed {seed}: {exc}") from exc
            report.rows.append(MetricsRow(method, "factor", seed,
                                          *factor_metrics(u, p.u_true), wall, peak))
            report.rows.append(MetricsRow(method, "frames", seed,
                                          *frame_metrics(u, p.u_true, p.basis, frames_sel),
                                          wall, peak))
            if suite.error_maps and seed == suite.seeds[0]:
                save_error_map(out / f"errmap_{method}.png", u, p.u_true, p.basis,
                               frames_sel[:min(4, frames_sel.size)])

    report.write_csv(out / "metrics.csv")
    (out / "table.md").write_text(report.table() + "\n")
    with open(out / "params.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value"])
        for k, v in report.params.items():
            w.writerow([k, f"{v:.17g}"])
    with open(out / "setup.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "wall_time_s"])
        for k, v in report.setup_times.items():
            w.writerow([k, f"{v:.6g}"])
    return report
