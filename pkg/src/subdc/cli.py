"""Command-line front end: phantom, basis, sim, recon, metrics, bench.

Every stage reads and writes ``.ncs`` tensors in a working directory:

* ``phantom`` -> ``x.ncs`` (frames, N_x x N_y x T)
* ``basis``   -> ``phi.ncs`` (L x T) and, when ``x.ncs`` is present, ``u_true.ncs``
* ``sim``     -> ``maps.ncs``, ``traj.ncs``, ``schedule.ncs``, ``kspace.ncs``
* ``recon``   -> ``u_<method>.ncs``
* ``metrics`` -> printed values and optionally ``metrics.csv``
* ``bench``   -> report files of :func:`subdc.bench.run_benchmark`

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
import scipy.fft

from . import bench, dc, metrics
from .encoding import NORMAL_PATHS, SubspaceEncoding
from .phantom import PhantomConfig, make_coil_maps, phantom_frames, project, simulate_acquisition
from .subspace import TemporalBasis
from .tensorio import TensorFormatError, read_tensor, write_tensor
from .trajectory import (SamplingSchedule, Trajectory, area_density_weights, golden_angle_spokes,
                         linear_schedule)
from .transform import GriddingPlan

log = logging.getLogger("subdc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
RECON_METHODS = dc.RECON_METHODS


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_common(p: argparse.ArgumentParser, data=True):
    p.add_argument("--out", required=True, type=Path, help="output directory")
    if data:
        p.add_argument("--data", type=Path, help="input directory (default: --out)")
    p.add_argument("--threads", type=int, default=None, help="FFT worker count")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="subdc", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="write dynamic phantom frames x.ncs")
    _add_common(p, data=False)
    p.add_argument("--nx", type=int, default=32)
    p.add_argument("--ny", type=int, default=32)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--tr", type=float, default=0.1, help="frame spacing in seconds")
    p.add_argument("--motion", type=float, default=0.0, help="motion amplitude")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("basis", help="write temporal basis phi.ncs")
    _add_common(p)
    p.add_argument("--frames", type=int, default=None, help="default: from x.ncs")
    p.add_argument("--l-dim", type=int, default=4)
    p.add_argument("--tr", type=float, default=0.1)

    p = sub.add_parser("sim", help="simulate coil maps, trajectory and k-t data")
    _add_common(p)
    p.add_argument("--spokes", type=int, default=96)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--readouts-per-frame", type=int, default=3)
    p.add_argument("--coils", type=int, default=4)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("recon", help="reconstruct a spatial factor")
    _add_common(p)
    p.add_argument("--method", choices=RECON_METHODS, required=True)
    p.add_argument("--prior", default="copy-init", help="PATH | copy-init | smooth-init")
    p.add_argument("--smooth-sigma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=None, help="default: 1 / ||normal||")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="default: 0.3 ||normal|| for ds, 0.01 ||normal|| for cg")
    p.add_argument("--cg-iters", type=int, default=5)
    p.add_argument("--admm-iters", type=int, default=20)
    p.add_argument("--normal-path", choices=NORMAL_PATHS, default="direct")
    p.add_argument("--exact-ndft", action="store_true", help="exact NDFT instead of gridding")

    p = sub.add_parser("metrics", help="compare a reconstruction with a reference")
    p.add_argument("--recon", required=True, type=Path)
    p.add_argument("--ref", required=True, type=Path)
    p.add_argument("--out", type=Path, default=None, help="directory for metrics.csv")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("bench", help="run a benchmark suite")
    _add_common(p, data=False)
    p.add_argument("--suite", type=Path, default=None, help="key = value suite file")
    return ap


# -- helpers --------------------------------------------------------------

def _read(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileNotFoundError(f"missing input {path}")
    return read_tensor(path)


def _inputs(args, *names) -> dict[str, np.ndarray]:
    src = args.data or args.out
    return {n: _read(src / f"{n}.ncs") for n in names}


def load_acquisition(d: dict[str, np.ndarray]):
    """Rebuild basis, trajectory, schedule and maps from loaded tensors,
    checking that their dimensions agree."""
    basis = TemporalBasis(d["phi"])
    traj = Trajectory(d["traj"])
    t_idx = d["schedule"]
    if not np.array_equal(t_idx, np.round(t_idx)):
        raise ValueError("schedule.ncs must hold integer frame indices")
    sched = SamplingSchedule(t_idx.astype(np.int64), basis.n_frames)
    maps = d["maps"]
    b = d["kspace"]
    if b.shape != (maps.shape[0], traj.n_readouts, traj.n_samples):
        raise ValueError(f"kspace {b.shape} does not match maps/trajectory "
                         f"{(maps.shape[0], traj.n_readouts, traj.n_samples)}")
    return basis, traj, sched, maps, b


def make_encoding(maps, traj, sched, basis, exact: bool) -> SubspaceEncoding:
    plan = None if exact else GriddingPlan(tuple(maps.shape[1:]))
    return SubspaceEncoding(maps, traj, sched, basis, plan=plan)


def resolve_prior(source: str, u0: np.ndarray, smooth_sigma: float) -> np.ndarray:
    if source == "copy-init":
        return u0.copy()
    if source == "smooth-init":
        return bench.smooth_prior(u0, smooth_sigma)
    prior = _read(Path(source))
    if prior.shape != u0.shape:
        raise ValueError(f"prior {prior.shape} does not match factor shape {u0.shape}")
    return prior.astype(np.complex128)


# -- subcommands ------------------------------------------------------------

def cmd_phantom(args) -> None:
    cfg = PhantomConfig(size=(args.nx, args.ny), n_frames=args.frames, tr=args.tr,
                        motion_amplitude=args.motion, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_tensor(args.out / "x.ncs", phantom_frames(cfg))


def cmd_basis(args) -> None:
    src = args.data or args.out
    x = _read(src / "x.ncs") if (src / "x.ncs").is_file() else None
    frames = args.frames if args.frames is not None else (x.shape[-1] if x is not None else 32)
    if x is not None and x.shape[-1] != frames:
        raise ValueError(f"--frames {frames} disagrees with x.ncs ({x.shape[-1]} frames)")
    if not 1 <= args.l_dim <= frames:
        raise ValueError(f"--l-dim must be in [1, {frames}]")
    basis = bench.dictionary_basis(frames, args.tr, args.l_dim)
    args.out.mkdir(parents=True, exist_ok=True)
    write_tensor(args.out / "phi.ncs", basis.phi)
    if x is not None:
        write_tensor(args.out / "u_true.ncs", project(x.astype(np.complex128), basis))


def cmd_sim(args) -> None:
    x = _inputs(args, "x")["x"].astype(np.complex128)
    if x.ndim != 3:
        raise ValueError(f"x.ncs must be (N_x, N_y, T), got {x.shape}")
    traj = golden_angle_spokes(args.spokes, args.samples)
    sched = linear_schedule(args.spokes, args.readouts_per_frame)
    if sched.n_frames != x.shape[-1]:
        raise ValueError(f"{args.spokes} spokes at {args.readouts_per_frame} per frame give "
                         f"{sched.n_frames} frames, x.ncs has {x.shape[-1]}")
    maps = make_coil_maps(args.coils, x.shape[:2])
    b = simulate_acquisition(x, maps, traj, sched, args.noise_sigma, exact=True, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_tensor(args.out / "maps.ncs", maps)
    write_tensor(args.out / "traj.ncs", np.asarray(traj.coords, dtype=np.float64))
    write_tensor(args.out / "schedule.ncs", sched.time_index.astype(np.float64))
    write_tensor(args.out / "kspace.ncs", b)


def cmd_recon(args) -> None:
    d = _inputs(args, "phi", "maps", "traj", "schedule", "kspace")
    basis, traj, sched, maps, b = load_acquisition(d)
    if args.prior not in ("copy-init", "smooth-init") and not Path(args.prior).is_file():
        raise FileNotFoundError(f"prior {args.prior} not found")
    ops = make_encoding(maps, traj, sched, basis, args.exact_ndft)
    u0 = dc.zero_filled_init(b, ops, area_density_weights(traj, sched))
    prior = resolve_prior(args.prior, u0, args.smooth_sigma)
    u = dc.reconstruct(args.method, prior, b, ops, u0, args.alpha, args.lam, args.cg_iters,
                    args.admm_iters, args.normal_path)
    if not np.all(np.isfinite(u)):
        raise FloatingPointError(f"{args.method} produced non-finite values")
    args.out.mkdir(parents=True, exist_ok=True)
    write_tensor(args.out / f"u_{args.method}.ncs", u)


def cmd_metrics(args) -> None:
    test, ref = _read(args.recon), _read(args.ref)
    if test.shape != ref.shape:
        raise ValueError(f"recon {test.shape} and ref {ref.shape} differ in shape")
    if ref.ndim == 3:
        vals = bench.factor_metrics(test, ref)
    else:
        s = metrics.ssim(test, ref) if min(ref.shape) >= metrics.SSIM_WIN else float("nan")
        vals = (metrics.nrmse(test, ref), metrics.psnr(test, ref), s)
    for name, v in zip(("nrmse", "psnr_db", "ssim"), vals):
        print(f"{name} {v:.17g}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["nrmse", "psnr_db", "ssim"])
            w.writerow([f"{v:.17g}" for v in vals])


def cmd_bench(args) -> None:
    suite = bench.BenchSuite.from_file(args.suite) if args.suite else bench.BenchSuite()
    report = bench.run_benchmark(suite, args.out)
    print(report.table())


COMMANDS = {"phantom": cmd_phantom, "basis": cmd_basis, "sim": cmd_sim, "recon": cmd_recon,
            "metrics": cmd_metrics, "bench": cmd_bench}


def run(argv: list[str] | None = None) -> int:
    """Run one command and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:            # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("subdc: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    workers = args.threads or os.cpu_count() or 1
    try:
        with scipy.fft.set_workers(workers):
            COMMANDS[args.command](args)
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"subdc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TensorFormatError, OSError) as exc:
        print(f"subdc {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())
