"""Fourier machinery: exact NDFT, Kaiser-Bessel gridding NUFFT, and Toeplitz embedding.

Conventions
-----------
* Images are indexed ``x[ix, iy]``; pixel ``(N_x // 2, N_y // 2)`` is the
  spatial origin, so a centered delta has flat unit k-space.
* k-space coordinates are in cycles/pixel, each component in ``[-0.5, 0.5)``.
* The forward transform is unnormalized::

      s_m = sum_r x(r) exp(-2j pi k_m . r)

* All transforms accept leading batch axes: images are ``(..., N_x, N_y)`` and
  samples are ``(..., M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.special import i0

__all__ = [
    "GriddingPlan",
    "GriddingOperator",
    "NDFTOperator",
    "crop_center",
    "ndft_adjoint",
    "ndft_forward",
    "nufft_adjoint",
    "nufft_forward",
    "psf_diagonal",
    "toeplitz_apply",
    "zero_pad_embed",
]

# rows of the NDFT evaluated at once; bounds the (chunk, N) exponential tables
_NDFT_CHUNK = 4096


def _check_coords(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise ValueError(f"coords must be (M, 2), got {coords.shape}")
    if coords.size and (coords.min() < -0.5 or coords.max() >= 0.5):
        raise ValueError("k-space coordinates must lie in [-0.5, 0.5)")
    return coords


def pixel_offsets(n: int) -> np.ndarray:
    """Spatial positions of the pixels along one axis, origin at ``n // 2``."""
    return np.arange(n, dtype=np.float64) - (n // 2)


def ndft_forward(image: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Exact nonuniform DFT of ``image`` at ``coords``.

    Parameters
    ----------
    image : ndarray, shape (..., N_x, N_y)
    coords : ndarray, shape (M, 2)

    Returns
    -------
    ndarray, shape (..., M), complex128
    """
    coords = _check_coords(coords)
    image = np.asarray(image, dtype=np.complex128)
    nx, ny = image.shape[-2:]
    rx, ry = pixel_offsets(nx), pixel_offsets(ny)
    batch = image.shape[:-2]
    out = np.empty(batch + (coords.shape[0],), dtype=np.complex128)
    for lo in range(0, coords.shape[0], _NDFT_CHUNK):
        kc = coords[lo:lo + _NDFT_CHUNK]
        ex = np.exp(-2j * np.pi * np.outer(kc[:, 0], rx))
        ey = np.exp(-2j * np.pi * np.outer(kc[:, 1], ry))
        # separable: sum_x ex[m, x] sum_y ey[m, y] image[x, y]
        out[..., lo:lo + _NDFT_CHUNK] = np.sum((ex @ image) * ey, axis=-1)
    return out


def ndft_adjoint(samples: np.ndarray, coords: np.ndarray,
                 size: tuple[int, int]) -> np.ndarray:
    """Exact conjugate transpose of :func:`ndft_forward`.

    ``samples`` has shape ``(..., M)``; returns ``(..., N_x, N_y)``.
    """
    coords = _check_coords(coords)
    samples = np.asarray(samples, dtype=np.complex128)
    if samples.shape[-1] != coords.shape[0]:
        raise ValueError(f"{samples.shape[-1]} samples for {coords.shape[0]} coords")
    nx, ny = size
    rx, ry = pixel_offsets(nx), pixel_offsets(ny)
    out = np.zeros(samples.shape[:-1] + (nx, ny), dtype=np.complex128)
    for lo in range(0, coords.shape[0], _NDFT_CHUNK):
        kc = coords[lo:lo + _NDFT_CHUNK]
        ex = np.exp(2j * np.pi * np.outer(rx, kc[:, 0]))
        ey = np.exp(2j * np.pi * np.outer(kc[:, 1], ry))
        out += ex @ (samples[..., lo:lo + _NDFT_CHUNK, None] * ey)
    return out


class NDFTOperator:
    """Exact NDFT bound to a fixed set of coordinates."""

    exact = True

    def __init__(self, size: tuple[int, int], coords: np.ndarray):
        self.size = (int(size[0]), int(size[1]))
        self.coords = _check_coords(coords)

    @property
    def n_samples(self) -> int:
        return self.coords.shape[0]

    def forward(self, image: np.ndarray) -> np.ndarray:
        if image.shape[-2:] != self.size:
            raise ValueError(f"image {image.shape[-2:]} != operator size {self.size}")
        return ndft_forward(image, self.coords)

    def adjoint(self, samples: np.ndarray) -> np.ndarray:
        return ndft_adjoint(samples, self.coords, self.size)


def kaiser_bessel(dist: np.ndarray, width: int, beta: float) -> np.ndarray:
    """Kaiser-Bessel profile in grid units, zero outside ``|dist| <= width / 2``."""
    arg = 1.0 - (2.0 * np.asarray(dist) / width) ** 2
    return np.where(arg >= 0, i0(beta * np.sqrt(np.clip(arg, 0, None))), 0.0)


def kaiser_bessel_ft(nu: np.ndarray, width: int, beta: float) -> np.ndarray:
    """Continuous Fourier transform of :func:`kaiser_bessel` at frequency ``nu``
    (cycles per grid unit)."""
    z2 = beta ** 2 - (np.pi * width * np.asarray(nu, dtype=np.float64)) ** 2
    z = np.sqrt(np.abs(z2))
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.where(z2 > 0, np.sinh(z) / z, np.sin(z) / z)
    val = np.where(z < 1e-8, 1.0, val)
    return width * val


def beatty_beta(width: int, oversampling: float) -> float:
    """Kaiser-Bessel shape parameter from Beatty et al. (2005)."""
    return float(np.pi * np.sqrt((width / oversampling) ** 2
                                 * (oversampling - 0.5) ** 2 - 0.8))


@dataclass(frozen=True)
class GriddingPlan:
    """Precomputed geometry for Kaiser-Bessel gridding of one image size.

    Parameters
    ----------
    image_size : tuple of int
        ``(N_x, N_y)``.
    oversampling : float
        Grid oversampling factor, at least 1.25.
    kernel_width : int
        Interpolation kernel width in oversampled-grid units (even).
    """

    image_size: tuple[int, int]
    oversampling: float = 2.0
    kernel_width: int = 4
    beta: float = field(init=False)
    grid_size: tuple[int, int] = field(init=False)
    apodization: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.oversampling < 1.25:
            raise ValueError("oversampling must be >= 1.25")
        if self.kernel_width < 2 or self.kernel_width % 2:
            raise ValueError("kernel_width must be an even integer >= 2")
        size = (int(self.image_size[0]), int(self.image_size[1]))
        grid = tuple(2 * int(np.ceil(self.oversampling * n / 2)) for n in size)
        beta = beatty_beta(self.kernel_width, self.oversampling)
        apod = np.outer(
            kaiser_bessel_ft(pixel_offsets(size[0]) / grid[0], self.kernel_width, beta),
            kaiser_bessel_ft(pixel_offsets(size[1]) / grid[1], self.kernel_width, beta))
        if not np.all(apod > 0):
            raise ValueError("deapodization is not strictly positive for this plan")
        object.__setattr__(self, "image_size", size)
        object.__setattr__(self, "grid_size", grid)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "apodization", apod)

    def kernel_profile(self, n: int = 64) -> np.ndarray:
        """Kernel samples on ``[-width/2, width/2]``."""
        d = np.linspace(-self.kernel_width / 2, self.kernel_width / 2, n)
        return kaiser_bessel(d, self.kernel_width, self.beta)

    def interpolator(self, coords: np.ndarray) -> sp.csr_matrix:
        """Sparse ``(M, G_x * G_y)`` matrix interpolating the unshifted
        oversampled FFT onto ``coords``."""
        coords = _check_coords(coords)
        gx, gy = self.grid_size
        w = self.kernel_width
        m = coords.shape[0]
        ux = coords[:, 0] * gx
        uy = coords[:, 1] * gy
        off = np.arange(w) - w // 2 + 1
        px = np.floor(ux)[:, None] + off          # (M, W)
        py = np.floor(uy)[:, None] + off
        wx = kaiser_bessel(ux[:, None] - px, w, self.beta)
        wy = kaiser_bessel(uy[:, None] - py, w, self.beta)
        ix = np.mod(px.astype(np.int64), gx)
        iy = np.mod(py.astype(np.int64), gy)
        cols = (ix[:, :, None] * gy + iy[:, None, :]).reshape(m, -1)
        vals = (wx[:, :, None] * wy[:, None, :]).reshape(m, -1)
        rows = np.repeat(np.arange(m), w * w)
        mat = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(m, gx * gy))
        mat.sum_duplicates()
        return mat

    def bind(self, coords: np.ndarray) -> "GriddingOperator":
        return GriddingOperator(self, coords)


class GriddingOperator:
    """Gridding NUFFT bound to fixed coordinates; forward/adjoint are exact
    adjoints of each other."""

    exact = False

    def __init__(self, plan: GriddingPlan, coords: np.ndarray):
        self.plan = plan
        self.size = plan.image_size
        self.coords = _check_coords(coords)
        self._interp = plan.interpolator(self.coords)
        self._interp_t = self._interp.T.tocsr()

    @property
    def n_samples(self) -> int:
        return self.coords.shape[0]

    def forward(self, image: np.ndarray) -> np.ndarray:
        nx, ny = self.size
        gx, gy = self.plan.grid_size
        if image.shape[-2:] != (nx, ny):
            raise ValueError(f"image {image.shape[-2:]} does not match plan {self.size}")
        batch = image.shape[:-2]
        img = np.asarray(image, dtype=np.complex128).reshape((-1, nx, ny))
        img = img / self.plan.apodization
        grid = np.zeros((img.shape[0], gx, gy), dtype=np.complex128)
        ox, oy = gx // 2 - nx // 2, gy // 2 - ny // 2
        grid[:, ox:ox + nx, oy:oy + ny] = img
        grid = scipy.fft.fft2(np.fft.ifftshift(grid, axes=(-2, -1)), axes=(-2, -1))
        out = self._interp @ grid.reshape(grid.shape[0], -1).T
        return np.ascontiguousarray(out.T).reshape(batch + (self.n_samples,))

    def adjoint(self, samples: np.ndarray) -> np.ndarray:
        nx, ny = self.size
        gx, gy = self.plan.grid_size
        samples = np.asarray(samples, dtype=np.complex128)
        if samples.shape[-1] != self.n_samples:
            raise ValueError(f"{samples.shape[-1]} samples for {self.n_samples} coords")
        batch = samples.shape[:-1]
        s = samples.reshape((-1, self.n_samples))
        grid = (self._interp_t @ s.T).T.reshape((-1, gx, gy))
        # adjoint of the unnormalized FFT
        grid = scipy.fft.ifft2(grid, axes=(-2, -1)) * (gx * gy)
        grid = np.fft.fftshift(grid, axes=(-2, -1))
        ox, oy = gx // 2 - nx // 2, gy // 2 - ny // 2
        img = grid[:, ox:ox + nx, oy:oy + ny] / self.plan.apodization
        return img.reshape(batch + (nx, ny))


def nufft_forward(plan: GriddingPlan, image: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Gridding approximation of :func:`ndft_forward`."""
    return plan.bind(coords).forward(image)


def nufft_adjoint(plan: GriddingPlan, samples: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`nufft_forward` for the same plan."""
    return plan.bind(coords).adjoint(samples)


def zero_pad_embed(image: np.ndarray) -> np.ndarray:
    """Center ``(..., N_x, N_y)`` inside a zero ``(..., 2N_x, 2N_y)`` array."""
    nx, ny = image.shape[-2:]
    out = np.zeros(image.shape[:-2] + (2 * nx, 2 * ny), dtype=image.dtype)
    ox, oy = nx - nx // 2, ny - ny // 2
    out[..., ox:ox + nx, oy:oy + ny] = image
    return out


def crop_center(image: np.ndarray) -> np.ndarray:
    """Inverse of :func:`zero_pad_embed` (its adjoint)."""
    mx, my = image.shape[-2:]
    if mx % 2 or my % 2:
        raise ValueError(f"crop_center needs even dims, got {(mx, my)}")
    nx, ny = mx // 2, my // 2
    ox, oy = nx - nx // 2, ny - ny // 2
    return image[..., ox:ox + nx, oy:oy + ny]


def psf_diagonal(coords: np.ndarray, weights: np.ndarray, size: tuple[int, int],
                 exact: bool = True, plan: GriddingPlan | None = None) -> np.ndarray:
    """Toeplitz diagonal ``q`` of the weighted normal operator
    ``x -> F^H diag(weights) F x``.

    The point spread function is evaluated on the 2x grid by an adjoint
    transform of ``weights`` and then Fourier transformed. The Nyquist row and
    column of the PSF never reach the cropped output, so they are zeroed; this
    keeps ``q`` real whenever the weights are real.

    Parameters
    ----------
    coords : ndarray, shape (M, 2)
    weights : ndarray, shape (..., M)
        One or more weight sets sharing ``coords``.
    size : tuple of int
        Image size ``(N_x, N_y)``; both must be even.
    exact : bool
        Build the PSF with the exact NDFT; otherwise use gridding.
    plan : GriddingPlan, optional
        Plan for the ``(2N_x, 2N_y)`` grid when ``exact`` is false.

    Returns
    -------
    ndarray, shape (..., 2N_x, 2N_y), in unshifted FFT order.
    """
    nx, ny = size
    if nx % 2 or ny % 2:
        raise ValueError(f"image size must be even, got {size}")
    big = (2 * nx, 2 * ny)
    weights = np.asarray(weights, dtype=np.complex128)
    if exact:
        psf = ndft_adjoint(weights, coords, big)
    else:
        if plan is None:
            plan = GriddingPlan(big)
        elif plan.image_size != big:
            raise ValueError(f"plan size {plan.image_size} != 2x grid {big}")
        psf = plan.bind(coords).adjoint(weights)
    psf[..., 0, :] = 0
    psf[..., :, 0] = 0
    return scipy.fft.fft2(np.fft.ifftshift(psf, axes=(-2, -1)), axes=(-2, -1))


def toeplitz_apply(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Apply ``Z^H F^{-1} diag(q) F Z`` to ``x`` of shape ``(..., N_x, N_y)``."""
    nx, ny = x.shape[-2:]
    if q.shape[-2:] != (2 * nx, 2 * ny):
        raise ValueError(f"q of shape {q.shape[-2:]} does not match image {(nx, ny)}")
    xk = scipy.fft.fft2(zero_pad_embed(np.asarray(x, dtype=np.complex128)), axes=(-2, -1))
    return crop_center(scipy.fft.ifft2(q * xk, axes=(-2, -1)))
