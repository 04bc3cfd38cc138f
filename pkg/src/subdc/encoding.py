"""Subspace forward model ``A_phi(U) = Omega([F_NU S U] phi)`` and its relatives.

Array layouts
-------------
* spatial factor ``u``: ``(N_x, N_y, L)`` complex
* coil sensitivities ``maps``: ``(n_coils, N_x, N_y)``
* coil factors ``y``: ``(n_coils, N_x, N_y, L)``
* k-t data ``b``: ``(n_coils, n_readouts, n_samples)``

The sampling operator is never materialized: data exist only at acquired
(readout, frame) pairs, and each readout ``m`` contracts the L subspace
channels with ``phi(t_m)``.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

from .subspace import TemporalBasis, ToeplitzKernelField, spoke_kernels, toeplitz_block_kernels
from .trajectory import SamplingSchedule, Trajectory
from .transform import GriddingPlan, NDFTOperator, crop_center, zero_pad_embed

NORMAL_PATHS = ("direct", "kernel", "toeplitz")


def check_maps(maps: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Validate pixelwise normalization ``sum_c |s_c|^2 = 1`` where maps are nonzero."""
    maps = np.asarray(maps, dtype=np.complex128)
    if maps.ndim != 3:
        raise ValueError(f"maps must be (n_coils, N_x, N_y), got {maps.shape}")
    energy = np.sum(np.abs(maps) ** 2, axis=0)
    support = energy > 0
    if np.any(np.abs(energy[support] - 1.0) > tol):
        raise ValueError("coil maps are not pixelwise normalized")
    return maps


def apply_S(u: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Coil factors ``y_c = s_c * u`` for every subspace channel."""
    if u.shape[:2] != maps.shape[1:]:
        raise ValueError(f"factor {u.shape[:2]} and maps {maps.shape[1:]} differ in size")
    return maps[:, :, :, None] * u[None]


def combine_S(y: np.ndarray, maps: np.ndarray) -> np.ndarray:
    """Coil combination ``u = sum_c conj(s_c) y_c`` (the adjoint of :func:`apply_S`)."""
    if y.shape[:3] != maps.shape:
        raise ValueError(f"coil factors {y.shape[:3]} do not match maps {maps.shape}")
    return np.einsum("cxy,cxyl->xyl", maps.conj(), y)


class SubspaceEncoding:
    """Bundle of everything needed to apply ``A_phi``, ``E_phi`` and their normals.

    Parameters
    ----------
    maps : ndarray, shape (n_coils, N_x, N_y)
    traj : Trajectory
    schedule : SamplingSchedule
    basis : TemporalBasis
    plan : GriddingPlan, optional
        Gridding plan for the image size. ``None`` selects the exact NDFT.
    spoke_of : ndarray of int, optional
        Spoke index of every readout, for trajectories that revisit spokes.
        Defaults to one spoke per readout.

    Notes
    -----
    Operators are read-only after construction. The kernel structures are
    built on first use (or through :meth:`build_kernels`) and then cached.
    """

    def __init__(self, maps, traj: Trajectory, schedule: SamplingSchedule,
                 basis: TemporalBasis, plan: GriddingPlan | None = None,
                 spoke_of: np.ndarray | None = None):
        self.maps = check_maps(maps)
        self.size = self.maps.shape[1:]
        if traj.n_readouts != schedule.n_readouts:
            raise ValueError(f"trajectory has {traj.n_readouts} readouts, "
                             f"schedule {schedule.n_readouts}")
        if schedule.n_frames != basis.n_frames:
            raise ValueError(f"schedule has {schedule.n_frames} frames, basis {basis.n_frames}")
        self.traj = traj
        self.schedule = schedule
        self.basis = basis
        self.plan = plan
        if plan is not None and plan.image_size != tuple(self.size):
            raise ValueError(f"plan size {plan.image_size} != map size {self.size}")
        self._phi_m = basis.at(schedule.time_index)        # (R, L), no T axis
        self._nufft = self._bind(traj.flat())

        if spoke_of is None:
            self.spoke_of = np.arange(traj.n_readouts)
            self._spoke_nufft = self._nufft
        else:
            self.spoke_of = np.asarray(spoke_of, dtype=np.int64)
            first = np.zeros(int(self.spoke_of.max()) + 1, dtype=np.int64)
            first[self.spoke_of[::-1]] = np.arange(traj.n_readouts)[::-1]
            self._spoke_nufft = self._bind(traj.coords[first].reshape(-1, 2))
        self._kernels: np.ndarray | None = None
        self._field: ToeplitzKernelField | None = None

    def _bind(self, coords):
        if self.plan is None:
            return NDFTOperator(self.size, coords)
        return self.plan.bind(coords)

    @property
    def exact(self) -> bool:
        return self.plan is None

    @property
    def rank(self) -> int:
        return self.basis.rank

    @property
    def n_coils(self) -> int:
        return self.maps.shape[0]

    @property
    def data_shape(self) -> tuple[int, int, int]:
        return (self.n_coils, self.traj.n_readouts, self.traj.n_samples)

    @property
    def factor_shape(self) -> tuple[int, int, int]:
        return (self.size[0], self.size[1], self.rank)

    # -- kernel structures -------------------------------------------------

    @property
    def kernels(self) -> np.ndarray:
        if self._kernels is None:
            n_spokes = int(self.spoke_of.max()) + 1
            self._kernels = spoke_kernels(self.schedule, self.basis, self.spoke_of, n_spokes)
        return self._kernels

    @property
    def field(self) -> ToeplitzKernelField:
        if self._field is None:
            self._field = toeplitz_block_kernels(self.traj, self.schedule, self.basis,
                                                 self.size, exact=self.exact)
        return self._field

    def set_field(self, field: ToeplitzKernelField) -> None:
        if field.image_size != tuple(self.size) or field.rank != self.rank:
            raise ValueError("kernel field does not match this operator")
        self._field = field

    def build_kernels(self, paths=NORMAL_PATHS) -> "SubspaceEncoding":
        if "kernel" in paths:
            self.kernels
        if "toeplitz" in paths:
            self.field
        return self

    # -- coil-wise encoding E_phi -------------------------------------------

    def _check_coil_factors(self, y):
        want = (self.n_coils,) + self.factor_shape
        if y.shape != want:
            raise ValueError(f"coil factors have shape {y.shape}, expected {want}")

    def _check_data(self, b):
        if b.shape != self.data_shape:
            raise ValueError(f"k-t data have shape {b.shape}, expected {self.data_shape}")

    def coil_forward(self, y: np.ndarray) -> np.ndarray:
        """``E_phi`` applied to coil factors ``(C, N_x, N_y, L)``."""
        self._check_coil_factors(y)
        c, r, s = self.data_shape
        spec = self._nufft.forward(np.moveaxis(y, -1, 1))          # (C, L, R*S)
        spec = spec.reshape(c, self.rank, r, s)
        return np.einsum("clrs,rl->crs", spec, self._phi_m)

    def coil_adjoint(self, b: np.ndarray) -> np.ndarray:
        """``E_phi^*``: scatter each readout by ``conj(phi(t_m))`` and grid back."""
        self._check_data(b)
        c, r, s = self.data_shape
        z = b[:, None, :, :] * self._phi_m.conj().T[None, :, :, None]  # (C, L, R, S)
        img = self._nufft.adjoint(z.reshape(c, self.rank, r * s))
        return np.moveaxis(img, 1, -1)

    def coil_normal(self, y: np.ndarray, path: str = "direct") -> np.ndarray:
        """``E_phi^* E_phi`` on coil factors by the chosen path."""
        self._check_coil_factors(y)
        if path == "direct":
            return self.coil_adjoint(self.coil_forward(y))
        if path == "kernel":
            return self._kernel_normal(y)
        if path == "toeplitz":
            return self._toeplitz_normal(y)
        raise ValueError(f"unknown normal path {path!r}; expected one of {NORMAL_PATHS}")

    def _kernel_normal(self, y):
        k = self.kernels
        c = self.n_coils
        s = self.traj.n_samples
        spec = self._spoke_nufft.forward(np.moveaxis(y, -1, 1))     # (C, L, P*S)
        spec = spec.reshape(c, self.rank, k.shape[0], s)
        # right-multiply each spoke's row vector of channels by K_s
        spec = np.einsum("clps,pli->cips", spec, k)
        img = self._spoke_nufft.adjoint(spec.reshape(c, self.rank, -1))
        return np.moveaxis(img, 1, -1)

    def _toeplitz_normal(self, y):
        return toeplitz_field_apply(self.field, np.moveaxis(y, -1, 1), shift=0.0,
                                    invert=False).transpose(0, 2, 3, 1)

    # -- subspace encoding A_phi --------------------------------------------

    def forward(self, u: np.ndarray) -> np.ndarray:
        """``A_phi(u)`` -> k-t data ``(C, R, S)``."""
        return self.coil_forward(apply_S(u, self.maps))

    def adjoint(self, b: np.ndarray) -> np.ndarray:
        """``A_phi^*(b)`` -> spatial factor ``(N_x, N_y, L)``."""
        return combine_S(self.coil_adjoint(b), self.maps)

    def normal(self, u: np.ndarray, path: str = "direct") -> np.ndarray:
        """``A_phi^* A_phi (u)``; every path computes the same linear map."""
        return combine_S(self.coil_normal(apply_S(u, self.maps), path), self.maps)


def toeplitz_field_apply(field: ToeplitzKernelField, y: np.ndarray, shift: float = 0.0,
                         invert: bool = False) -> np.ndarray:
    """Apply ``Z^H F^-1 (W + shift I)^{+-1} F Z`` to channel-first images.

    Parameters
    ----------
    field : ToeplitzKernelField
    y : ndarray, shape (..., L, N_x, N_y)
    shift : float
        Diagonal shift added to every ``W[n]``.
    invert : bool
        Solve with ``W[n] + shift I`` at every location instead of multiplying.
    """
    nx, ny = field.image_size
    L = field.rank
    if y.shape[-3:] != (L, nx, ny):
        raise ValueError(f"input {y.shape[-3:]} does not match field {(L, nx, ny)}")
    batch = y.shape[:-3]
    yk = scipy.fft.fft2(zero_pad_embed(np.asarray(y, dtype=np.complex128)), axes=(-2, -1))
    yk = yk.reshape((-1, L, 2 * nx, 2 * ny))
    rhs = np.moveaxis(yk, (0, 1), (-1, -2))                          # (2Nx, 2Ny, L, B)
    mat = field.w
    if shift:
        mat = mat + shift * np.eye(L)
    if invert:
        out = np.linalg.solve(mat, rhs)
    else:
        out = mat @ rhs
    out = np.moveaxis(out, (-1, -2), (0, 1)).reshape(batch + (L, 2 * nx, 2 * ny))
    return crop_center(scipy.fft.ifft2(out, axes=(-2, -1)))


def _encoding(maps, plan, traj, schedule, phi) -> SubspaceEncoding:
    basis = phi if isinstance(phi, TemporalBasis) else TemporalBasis(phi)
    return SubspaceEncoding(maps, traj, schedule, basis, plan=plan)


def forward_APhi(u, maps, plan, traj, schedule, phi) -> np.ndarray:
    """One-shot ``A_phi(u)``; ``plan=None`` uses the exact NDFT."""
    return _encoding(maps, plan, traj, schedule, phi).forward(u)


def adjoint_APhi(b, maps, plan, traj, schedule, phi) -> np.ndarray:
    """One-shot ``A_phi^*(b)``."""
    return _encoding(maps, plan, traj, schedule, phi).adjoint(b)


def normal_APhi(u, maps, plan, traj, schedule, phi, path: str = "direct") -> np.ndarray:
    """One-shot ``A_phi^* A_phi (u)`` along ``path``."""
    return _encoding(maps, plan, traj, schedule, phi).normal(u, path)
