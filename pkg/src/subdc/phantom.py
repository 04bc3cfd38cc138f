"""Synthetic dynamic phantom, analytic coil maps and k-t acquisition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .subspace import TemporalBasis
from .trajectory import SamplingSchedule, Trajectory
from .transform import GriddingPlan, ndft_forward


@dataclass(frozen=True)
class Tissue:
    """Ellipse in normalized coordinates (``[-1, 1)`` across the FOV)."""

    cx: float
    cy: float
    a: float
    b: float
    angle: float          # degrees
    pd: float             # proton density
    t1: float             # seconds
    moves: bool = True


def default_tissues() -> tuple[Tissue, ...]:
    # drawn in order; later tissues cover earlier ones
    return (
        Tissue(0.0, 0.0, 0.85, 0.70, 0.0, 0.8, 1.0, moves=False),       # body
        Tissue(-0.35, 0.42, 0.35, 0.20, -10.0, 0.8, 0.8),               # liver
        Tissue(0.0, -0.52, 0.50, 0.10, 0.0, 0.9, 0.4, moves=False),     # fat
        Tissue(0.10, 0.0, 0.38, 0.42, 20.0, 0.7, 1.25),                 # myocardium
        Tissue(0.10, 0.0, 0.24, 0.28, 20.0, 1.0, 1.9),                  # blood pool
    )


@dataclass(frozen=True)
class PhantomConfig:
    size: tuple[int, int] = (32, 32)
    n_frames: int = 32
    tissues: tuple[Tissue, ...] = field(default_factory=default_tissues)
    motion_amplitude: float = 0.0
    motion_period: float = 16.0
    tr: float = 0.1
    seed: int = 0
    t1_jitter: float = 0.05
    edge_width: float = 1.0

    def __post_init__(self):
        if self.size[0] % 2 or self.size[1] % 2 or min(self.size) < 2:
            raise ValueError(f"phantom size must be even, got {self.size}")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if not self.tissues:
            raise ValueError("at least one tissue is required")
        for t in self.tissues:
            if t.t1 <= 0:
                raise ValueError("tissue T1 must be positive")
            if t.a <= 0 or t.b <= 0:
                raise ValueError("degenerate ellipse")
        if self.motion_period <= 0:
            raise ValueError("motion_period must be positive")


def ir_signal(tau: np.ndarray, t1: float) -> np.ndarray:
    return 1.0 - 2.0 * np.exp(-np.asarray(tau) / t1)


def _ellipse_mask(size, tissue: Tissue, dy: float, edge_width: float) -> np.ndarray:
    nx, ny = size
    x = (np.arange(nx) - nx // 2) / (nx / 2)
    y = (np.arange(ny) - ny // 2) / (ny / 2)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    th = np.deg2rad(tissue.angle)
    px, py = xx - tissue.cx, yy - (tissue.cy + dy)
    u = (px * np.cos(th) + py * np.sin(th)) / tissue.a
    v = (-px * np.sin(th) + py * np.cos(th)) / tissue.b
    rho = np.sqrt(u ** 2 + v ** 2)
    # soft edge about edge_width pixels wide
    width = edge_width / (min(tissue.a, tissue.b) * min(nx, ny) / 2)
    return 0.5 * (1.0 - np.tanh((rho - 1.0) / width))


def phantom_frames(cfg: PhantomConfig) -> np.ndarray:
    """Dynamic images ``X`` of shape ``(N_x, N_y, T)``, complex."""
    rng = np.random.default_rng(cfg.seed)
    jitter = 1.0 + cfg.t1_jitter * rng.uniform(-1, 1, len(cfg.tissues))
    tau = np.arange(cfg.n_frames) * cfg.tr
    x = np.zeros(cfg.size + (cfg.n_frames,), dtype=np.complex128)
    static = cfg.motion_amplitude == 0
    for k, tissue in enumerate(cfg.tissues):
        sig = tissue.pd * ir_signal(tau, tissue.t1 * jitter[k])
        if static or not tissue.moves:
            m = _ellipse_mask(cfg.size, tissue, 0.0, cfg.edge_width)[..., None]
        else:
            dy = cfg.motion_amplitude * tissue.b * np.sin(2 * np.pi * np.arange(cfg.n_frames)
                                                          / cfg.motion_period)
            m = np.stack([_ellipse_mask(cfg.size, tissue, d, cfg.edge_width) for d in dy], axis=-1)
        x = x * (1.0 - m) + m * sig
    return x


def truncated_basis(x: np.ndarray, energy: float = 1.0 - 1e-8,
                    max_rank: int | None = None) -> TemporalBasis:
    """Temporal modes of ``x`` keeping the given fraction of energy."""
    nx, ny, t = x.shape
    _, s, vh = np.linalg.svd(x.reshape(nx * ny, t), full_matrices=False)
    cum = np.cumsum(s ** 2) / np.sum(s ** 2)
    rank = int(np.searchsorted(cum, energy) + 1)
    rank = min(rank, len(s))
    if max_rank is not None:
        rank = min(rank, max_rank)
    return TemporalBasis(vh[:rank])


def project(x: np.ndarray, basis: TemporalBasis) -> np.ndarray:
    """Spatial factor ``U = X phi^H`` of frames ``(N_x, N_y, T)``."""
    return x @ basis.phi.conj().T


def frames_from_factor(u: np.ndarray, basis: TemporalBasis,
                       frames: np.ndarray | None = None) -> np.ndarray:
    """``X = U phi`` restricted to the selected frames."""
    phi = basis.phi if frames is None else basis.phi[:, np.asarray(frames)]
    return u @ phi


def make_phantom(cfg: PhantomConfig) -> tuple[np.ndarray, np.ndarray, TemporalBasis]:
    """Returns ``(X, U_true, basis)`` with the basis truncated at energy ``1 - 1e-8``."""
    x = phantom_frames(cfg)
    basis = truncated_basis(x)
    return x, project(x, basis), basis


def make_coil_maps(n_coils: int, size: tuple[int, int]) -> np.ndarray:
    """Gaussian-lobed coil maps around the FOV border, pixelwise normalized.

    Returns ``(n_coils, N_x, N_y)`` complex maps with ``sum_c |s_c|^2 = 1``.
    """
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    nx, ny = size
    x = (np.arange(nx) - nx // 2) / (nx / 2)
    y = (np.arange(ny) - ny // 2) / (ny / 2)
    xx, yy = np.meshgrid(x, y, indexing="ij")
    maps = np.empty((n_coils, nx, ny), dtype=np.complex128)
    for c in range(n_coils):
        ang = 2 * np.pi * c / n_coils
        cx, cy = 1.1 * np.cos(ang), 1.1 * np.sin(ang)
        mag = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 0.8 ** 2))
        phase = ang + 0.6 * (np.cos(ang) * xx + np.sin(ang) * yy)
        maps[c] = mag * np.exp(1j * phase)
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))


def _frames_input(x) -> np.ndarray:
    if isinstance(x, tuple):
        u, basis = x
        phi = basis.phi if isinstance(basis, TemporalBasis) else np.asarray(basis)
        return np.asarray(u) @ phi
    return np.asarray(x, dtype=np.complex128)


def simulate_acquisition(x, maps: np.ndarray, traj: Trajectory, schedule: SamplingSchedule,
                         noise_sigma: float = 0.0, exact: bool = True,
                         plan: GriddingPlan | None = None, seed: int = 0) -> np.ndarray:
    """Sample ``S X`` along the trajectory, frame by frame.

    Parameters
    ----------
    x : ndarray (N_x, N_y, T) or tuple (U, basis)
        Dynamic frames, or a factor pair expanded as ``U phi``.
    maps : ndarray (n_coils, N_x, N_y)
    noise_sigma : float
        Complex Gaussian noise with standard deviation ``noise_sigma * RMS(b)``.
    exact : bool
        Exact NDFT (default) or gridding with ``plan``.
    seed : int
        Noise for readout ``m`` is drawn from a stream seeded by ``(seed, m)``.

    Returns
    -------
    ndarray, shape (n_coils, n_readouts, n_samples)
    """
    frames = _frames_input(x)
    nx, ny, t = frames.shape
    if maps.shape[1:] != (nx, ny):
        raise ValueError(f"maps {maps.shape[1:]} do not match frames {(nx, ny)}")
    if schedule.n_frames != t:
        raise ValueError(f"schedule has {schedule.n_frames} frames, data {t}")
    if schedule.n_readouts != traj.n_readouts:
        raise ValueError("schedule and trajectory disagree on readout count")
    if not exact and plan is None:
        plan = GriddingPlan((nx, ny))
    n_coils = maps.shape[0]
    b = np.zeros((n_coils, traj.n_readouts, traj.n_samples), dtype=np.complex128)
    for frame in np.unique(schedule.time_index):
        sel = np.flatnonzero(schedule.time_index == frame)
        coords = traj.coords[sel].reshape(-1, 2)
        imgs = maps * frames[None, :, :, frame]
        if exact:
            k = ndft_forward(imgs, coords)
        else:
            k = plan.bind(coords).forward(imgs)
        b[:, sel, :] = k.reshape(n_coils, sel.size, traj.n_samples)
    if noise_sigma > 0:
        scale = noise_sigma * np.sqrt(np.mean(np.abs(b) ** 2)) / np.sqrt(2.0)
        for m in range(traj.n_readouts):
            rng = np.random.default_rng([seed, m])
            shape = (n_coils, traj.n_samples)
            b[:, m, :] += scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return b


def noisy_prior(u_true: np.ndarray, snr: float, seed: int) -> np.ndarray:
    """``U_true`` plus white complex noise with ``||noise|| = ||U_true|| / snr``."""
    rng = np.random.default_rng(seed)
    nu = rng.standard_normal(u_true.shape) + 1j * rng.standard_normal(u_true.shape)
    nu *= np.linalg.norm(u_true) / (snr * np.linalg.norm(nu))
    return u_true + nu

