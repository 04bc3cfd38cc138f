"""Golden-angle radial trajectories, readout-to-frame schedules, and density weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# radial golden angle pi / phi (about 111.246 degrees), for spokes through k = 0
GOLDEN_ANGLE = np.pi * (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Trajectory:
    """k-space sample locations.

    Attributes
    ----------
    coords : ndarray, shape (n_readouts, n_samples, 2)
        Coordinates in cycles/pixel, each component in ``[-0.5, 0.5)``.
    """

    coords: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 3 or coords.shape[2] != 2:
            raise ValueError(f"coords must be (n_readouts, n_samples, 2), got {coords.shape}")
        if coords.min() < -0.5 or coords.max() >= 0.5:
            raise ValueError("trajectory coordinates must lie in [-0.5, 0.5)")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n_readouts(self) -> int:
        return self.coords.shape[0]

    @property
    def n_samples(self) -> int:
        return self.coords.shape[1]

    def flat(self) -> np.ndarray:
        return self.coords.reshape(-1, 2)


@dataclass(frozen=True)
class SamplingSchedule:
    """Assignment of each readout to a temporal frame."""

    time_index: np.ndarray
    n_frames: int

    def __post_init__(self):
        t = np.asarray(self.time_index, dtype=np.int64)
        if t.ndim != 1:
            raise ValueError("time_index must be one-dimensional")
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        if t.size and (t.min() < 0 or t.max() >= self.n_frames):
            raise ValueError(f"time indices must lie in [0, {self.n_frames})")
        t.setflags(write=False)
        object.__setattr__(self, "time_index", t)
        object.__setattr__(self, "n_frames", int(self.n_frames))

    @property
    def n_readouts(self) -> int:
        return self.time_index.size

    def readouts_per_frame(self) -> np.ndarray:
        return np.bincount(self.time_index, minlength=self.n_frames)


def golden_angle_spokes(n_readouts: int, n_samples: int) -> Trajectory:
    """Radial spokes rotated by the golden angle ``pi (sqrt(5) - 1) / 2``.

    Spoke ``i`` has azimuth ``i * GOLDEN_ANGLE`` and samples at radii
    ``(j - n_samples / 2) / n_samples`` for ``j = 0 .. n_samples - 1``.
    """
    if n_readouts < 1:
        raise ValueError("n_readouts must be >= 1")
    if n_samples < 2 or n_samples % 2:
        raise ValueError("n_samples must be an even integer >= 2")
    theta = spoke_angles(n_readouts)
    radii = (np.arange(n_samples) - n_samples / 2) / n_samples
    kx = np.outer(np.cos(theta), radii)
    ky = np.outer(np.sin(theta), radii)
    coords = np.stack([kx, ky], axis=-1)
    # cos rounding can push -0.5 * cos(theta) up to +0.5
    coords = np.minimum(coords, np.nextafter(0.5, 0.0))
    return Trajectory(coords)


def spoke_angles(n_readouts: int) -> np.ndarray:
    return np.arange(n_readouts) * GOLDEN_ANGLE


def linear_schedule(n_readouts: int, readouts_per_frame: int) -> SamplingSchedule:
    """Consecutive groups of ``readouts_per_frame`` readouts share a frame."""
    if readouts_per_frame < 1:
        raise ValueError("readouts_per_frame must be >= 1")
    if n_readouts < 0:
        raise ValueError("n_readouts must be >= 0")
    t = np.arange(n_readouts) // readouts_per_frame
    n_frames = max(1, -(-n_readouts // readouts_per_frame))
    return SamplingSchedule(t, n_frames)


def check_radial(traj: Trajectory, tol: float = 1e-9) -> None:
    """Raise ``ValueError`` unless every readout lies on a line through k = 0."""
    c = traj.coords
    # direction of each spoke from its farthest sample
    idx = np.argmax(np.linalg.norm(c, axis=-1), axis=1)
    d = c[np.arange(c.shape[0]), idx]
    norm = np.linalg.norm(d, axis=-1)
    if np.any(norm == 0):
        raise ValueError("degenerate readout: all samples at k = 0")
    d = d / norm[:, None]
    cross = c[..., 0] * d[:, None, 1] - c[..., 1] * d[:, None, 0]
    if np.max(np.abs(cross)) > tol:
        raise ValueError("trajectory is not radial: samples off the spoke line")


def radial_step(traj: Trajectory) -> float:
    """Radial sample spacing of a radial trajectory."""
    r = np.sort(np.linalg.norm(traj.coords[0], axis=-1))
    gaps = np.diff(r)
    gaps = gaps[gaps > 1e-12]
    if gaps.size == 0:
        return 1.0 / traj.n_samples
    return float(np.min(gaps))


def ramp_density_comp(traj: Trajectory, normalize: bool = True) -> np.ndarray:
    """Ramp density weights ``|k|`` for radial spokes.

    The sample at ``k = 0`` gets ``dk / 4`` instead of zero, so DC is kept.
    With ``normalize`` the weights are scaled to a maximum of 0.5.

    Returns
    -------
    ndarray, shape (n_readouts, n_samples)
    """
    check_radial(traj)
    dk = radial_step(traj)
    w = np.linalg.norm(traj.coords, axis=-1)
    w = np.where(w > 1e-12 * dk, w, dk / 4)
    if normalize:
        w = w * (0.5 / w.max())
    return w


def area_density_weights(traj: Trajectory, schedule: SamplingSchedule) -> np.ndarray:
    """Ramp weights converted to k-space cell areas per frame.

    The annulus at radius ``|k|`` is crossed twice by each of the ``R_t``
    spokes in frame ``t``, so a sample there represents an area of
    ``2 pi |k| dk / (2 R_t) = pi |k| dk / R_t``. With these weights the adjoint transform of a fully
    sampled frame approximates the inverse Fourier integral.
    """
    if schedule.n_readouts != traj.n_readouts:
        raise ValueError("schedule and trajectory disagree on readout count")
    dk = radial_step(traj)
    ramp = ramp_density_comp(traj, normalize=False)
    per_frame = schedule.readouts_per_frame()[schedule.time_index]
    return ramp * (np.pi * dk / per_frame)[:, None]


def cartesian_readouts(size: tuple[int, int], n_frames: int) -> tuple[Trajectory, SamplingSchedule]:
    """Fully sampled Cartesian grid, one readout per grid row, every frame."""
    nx, ny = size
    kx = (np.arange(nx) - nx // 2) / nx
    ky = (np.arange(ny) - ny // 2) / ny
    rows = np.stack(np.meshgrid(kx, ky, indexing="ij"), axis=-1)  # (nx, ny, 2)
    coords = np.tile(rows, (n_frames, 1, 1))
    t = np.repeat(np.arange(n_frames), nx)
    return Trajectory(coords), SamplingSchedule(t, n_frames)
