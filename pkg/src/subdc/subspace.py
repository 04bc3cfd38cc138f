"""Temporal bases and the two subspace kernel structures.

Two precomputed kernels let the normal operator stay inside the L-dimensional
subspace:

* per-spoke ``L x L`` kernels ``K_s = sum_{m on s} phi(t_m) phi(t_m)^H``, used
  between a NUFFT and its adjoint;
* a block-Toeplitz kernel field ``W[n]`` on the 2x oversampled Cartesian grid,
  one ``L x L`` matrix per grid location.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trajectory import SamplingSchedule, Trajectory
from .transform import GriddingPlan, psf_diagonal

DEFAULT_FIELD_BUDGET = 2 * 1024 ** 3


@dataclass(frozen=True)
class TemporalBasis:
    """Row-orthonormal temporal factor ``phi`` of shape ``(L, T)``."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.complex128)
        if phi.ndim != 2:
            raise ValueError("phi must be two-dimensional (L, T)")
        if phi.shape[0] > phi.shape[1]:
            raise ValueError(f"L={phi.shape[0]} exceeds T={phi.shape[1]}")
        gram = phi @ phi.conj().T
        err = np.linalg.norm(gram - np.eye(phi.shape[0]))
        if err > 1e-10:
            raise ValueError(f"rows of phi are not orthonormal (error {err:.3g})")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def rank(self) -> int:
        return self.phi.shape[0]

    @property
    def n_frames(self) -> int:
        return self.phi.shape[1]

    def at(self, time_index: np.ndarray) -> np.ndarray:
        """Columns ``phi(t_m)`` gathered per readout, shape ``(n_readouts, L)``."""
        return self.phi[:, np.asarray(time_index)].T


def ir_dictionary(t1_values, sample_times, normalize: bool = True) -> np.ndarray:
    """Inversion-recovery signal atoms ``1 - 2 exp(-tau / T1)``.

    Returns an ``(n_T1, n_tau)`` real matrix; rows are unit-norm when
    ``normalize`` is set.
    """
    t1 = np.asarray(t1_values, dtype=np.float64).ravel()
    tau = np.asarray(sample_times, dtype=np.float64).ravel()
    if t1.size == 0 or tau.size == 0:
        raise ValueError("T1 and sample-time grids must be non-empty")
    if np.any(t1 <= 0):
        raise ValueError("T1 values must be positive")
    if np.any(tau < 0):
        raise ValueError("sample times must be non-negative")
    atoms = 1.0 - 2.0 * np.exp(-tau[None, :] / t1[:, None])
    if normalize:
        atoms = atoms / np.linalg.norm(atoms, axis=1, keepdims=True)
    return atoms


def basis_from_dictionary(dictionary: np.ndarray, rank: int) -> TemporalBasis:
    """Top-``rank`` right singular vectors of ``dictionary`` as rows."""
    d = np.asarray(dictionary)
    if d.ndim != 2:
        raise ValueError("dictionary must be (n_atoms, T)")
    if not 1 <= rank <= min(d.shape):
        raise ValueError(f"rank must be in 1..{min(d.shape)}, got {rank}")
    _, _, vh = np.linalg.svd(d, full_matrices=False)
    return TemporalBasis(vh[:rank])


def spoke_kernels(schedule: SamplingSchedule, basis: TemporalBasis,
                  spoke_of: np.ndarray | None = None,
                  n_spokes: int | None = None) -> np.ndarray:
    """Per-spoke subspace kernels.

    Parameters
    ----------
    schedule : SamplingSchedule
    basis : TemporalBasis
    spoke_of : ndarray of int, optional
        Spoke index of each readout. Defaults to one spoke per readout.
    n_spokes : int, optional
        Number of spokes; defaults to ``max(spoke_of) + 1``.

    Returns
    -------
    ndarray, shape (n_spokes, L, L)
        ``K[s] = sum_{m : spoke_of[m] = s} phi(t_m) phi(t_m)^H``.
    """
    if schedule.n_frames != basis.n_frames:
        raise ValueError(f"schedule has {schedule.n_frames} frames, basis {basis.n_frames}")
    if spoke_of is None:
        spoke_of = np.arange(schedule.n_readouts)
    spoke_of = np.asarray(spoke_of, dtype=np.int64)
    if spoke_of.shape != (schedule.n_readouts,):
        raise ValueError("spoke_of must have one entry per readout")
    if n_spokes is None:
        n_spokes = int(spoke_of.max()) + 1 if spoke_of.size else 0
    if spoke_of.size and (spoke_of.min() < 0 or spoke_of.max() >= n_spokes):
        raise ValueError("spoke index out of range")
    ph = basis.at(schedule.time_index)                     # (R, L)
    outer = ph[:, :, None] * ph.conj()[:, None, :]         # (R, L, L)
    kernels = np.zeros((n_spokes, basis.rank, basis.rank), dtype=np.complex128)
    np.add.at(kernels, spoke_of, outer)
    return kernels


@dataclass(frozen=True)
class ToeplitzKernelField:
    """Per-location ``L x L`` kernels on the 2x grid, ``w[nx, ny, i, j] = q^(i,j)[nx, ny]``.

    Locations are in unshifted FFT order. Applying the field to channel
    spectra ``Y[n]`` gives ``sum_j w[n, i, j] Y_j[n]`` for output channel ``i``.
    """

    w: np.ndarray
    image_size: tuple[int, int]

    @property
    def rank(self) -> int:
        return self.w.shape[-1]

    @property
    def n_values(self) -> int:
        return self.w.size


def field_nbytes(size: tuple[int, int], rank: int, itemsize: int = 16) -> int:
    return 4 * size[0] * size[1] * rank * rank * itemsize


def toeplitz_block_kernels(traj: Trajectory, schedule: SamplingSchedule,
                           basis: TemporalBasis, size: tuple[int, int],
                           exact: bool = True,
                           budget_bytes: int = DEFAULT_FIELD_BUDGET) -> ToeplitzKernelField:
    """Block-Toeplitz kernel field of the coil-wise subspace normal operator.

    Block ``(i, j)`` is the Toeplitz diagonal of the sample weights
    ``phi_j(t_m) * conj(phi_i(t_m))``, repeated over the samples of readout
    ``m``. Only the upper triangle is transformed; the lower follows from
    Hermitian symmetry.
    """
    if schedule.n_readouts != traj.n_readouts:
        raise ValueError("schedule and trajectory disagree on readout count")
    if schedule.n_frames != basis.n_frames:
        raise ValueError("schedule and basis disagree on frame count")
    L = basis.rank
    need = field_nbytes(size, L)
    if need > budget_bytes:
        raise MemoryError(f"kernel field needs {need} bytes, budget is {budget_bytes}")
    ph = basis.at(schedule.time_index)                     # (R, L)
    iu, ju = np.triu_indices(L)
    per_readout = ph[:, ju] * ph[:, iu].conj()             # (R, P)
    weights = np.repeat(per_readout.T, traj.n_samples, axis=1)   # (P, R*S)
    plan = None if exact else GriddingPlan((2 * size[0], 2 * size[1]))
    q = psf_diagonal(traj.flat(), weights, size, exact=exact, plan=plan)
    w = np.empty((2 * size[0], 2 * size[1], L, L), dtype=np.complex128)
    for p, (i, j) in enumerate(zip(iu, ju)):
        w[:, :, i, j] = q[p]
        if i != j:
            w[:, :, j, i] = q[p].conj()
    return ToeplitzKernelField(w, (int(size[0]), int(size[1])))
