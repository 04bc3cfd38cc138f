"""Data-consistency layers, the zero-filled initializer and the ADMM reference.

All solvers take a prior factor ``u_cnn`` (any externally produced estimate)
and the k-t data ``b`` and return a spatial factor of the same shape.

The regularized problem is::

    min_U ||b - A(U)||^2 + lam ||U - U_cnn||^2

with normal equations ``(A^* A + lam I) U = A^* b + lam U_cnn``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.fft

from .encoding import NORMAL_PATHS, SubspaceEncoding, apply_S, combine_S, toeplitz_field_apply
from .subspace import ToeplitzKernelField


@dataclass(frozen=True)
class DCConfig:
    """Step size, regularization weight and iteration count for one DC layer."""

    alpha: float = 1.0
    lam: float = 0.0
    cg_iters: int = 5
    normal_path: str = "direct"

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.lam)):
            raise ValueError("alpha and lam must be finite")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.cg_iters < 0:
            raise ValueError("cg_iters must be >= 0")
        if self.normal_path not in NORMAL_PATHS:
            raise ValueError(f"normal_path must be one of {NORMAL_PATHS}")


# -- preconditioner ---------------------------------------------------------

def centered_frequencies(n: int) -> np.ndarray:
    """Integer-bin frequencies ``(i - n // 2) / n`` in cycles/pixel."""
    return (np.arange(n) - n // 2) / n


@dataclass(frozen=True)
class Preconditioner:
    """Cartesian k-space ramp, applied per channel as ``F^-1 diag(ramp) F``.

    ``ramp`` is stored in centered order (DC at ``(N_x // 2, N_y // 2)``).
    """

    ramp: np.ndarray

    def __post_init__(self):
        if np.any(self.ramp <= 0):
            raise ValueError("ramp must be strictly positive")

    def apply(self, images: np.ndarray) -> np.ndarray:
        """Filter ``(..., N_x, N_y)`` images."""
        if images.shape[-2:] != self.ramp.shape:
            raise ValueError(f"images {images.shape[-2:]} do not match ramp {self.ramp.shape}")
        # a diagonal k-space filter commutes with the spatial phase reference,
        # so plain FFT order only needs the ramp rolled once
        filt = np.fft.ifftshift(self.ramp)
        k = scipy.fft.fft2(images, axes=(-2, -1))
        return scipy.fft.ifft2(k * filt, axes=(-2, -1))


def build_ramp_preconditioner(size: tuple[int, int], epsilon: float | None = None) -> Preconditioner:
    """Ramp ``max(|k|, epsilon)`` on the centered Cartesian grid.

    ``epsilon`` defaults to half the smallest nonzero ``|k|`` bin.
    """
    nx, ny = size
    if epsilon is None:
        epsilon = 0.5 * min(1.0 / nx, 1.0 / ny)
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    kx, ky = np.meshgrid(centered_frequencies(nx), centered_frequencies(ny), indexing="ij")
    return Preconditioner(np.maximum(np.hypot(kx, ky), epsilon))


# -- initializer and single-step layers --------------------------------------

def zero_filled_init(b: np.ndarray, ops: SubspaceEncoding, dweights: np.ndarray) -> np.ndarray:
    """Zero-filled regridding ``U_0 = S^H F_NU^H D Omega^*(b) phi^H``.

    ``dweights`` has shape ``(n_readouts, n_samples)`` and is applied as given.
    """
    dweights = np.asarray(dweights)
    if dweights.shape != b.shape[1:]:
        raise ValueError(f"density weights {dweights.shape} do not match data {b.shape[1:]}")
    return ops.adjoint(b * dweights[None])


def gd_dc(u_cnn: np.ndarray, b: np.ndarray, cfg: DCConfig, ops: SubspaceEncoding) -> np.ndarray:
    """One gradient step on the data term: ``U - alpha (A^*A U - A^* b)``."""
    if cfg.alpha == 0:
        return u_cnn.copy()
    grad = ops.normal(u_cnn, cfg.normal_path) - ops.adjoint(b)
    return u_cnn - cfg.alpha * grad


def pgd_dc(u_cnn: np.ndarray, b: np.ndarray, cfg: DCConfig, precond: Preconditioner,
           ops: SubspaceEncoding) -> np.ndarray:
    """Preconditioned step ``U - alpha S^H P [E^*E (S U) - E^* b]``, with ``P``
    applied to every coil and subspace channel."""
    if cfg.alpha == 0:
        return u_cnn.copy()
    y = apply_S(u_cnn, ops.maps)
    grad = ops.coil_normal(y, cfg.normal_path) - ops.coil_adjoint(b)
    grad = np.moveaxis(precond.apply(np.moveaxis(grad, -1, 1)), 1, -1)
    return u_cnn - cfg.alpha * combine_S(grad, ops.maps)


def field_min_eigenvalue(field: ToeplitzKernelField) -> float:
    return float(np.linalg.eigvalsh(field.w).min())


def ds_dc(u_cnn: np.ndarray, b: np.ndarray, ops: SubspaceEncoding, cfg: DCConfig,
          field: ToeplitzKernelField | None = None, residual: bool = True) -> np.ndarray:
    """Directly solved DC through the block-Toeplitz kernel field.

    With ``G = Z^H F^-1 (W + lam I)^-1 F Z`` and ``y0_c = s_c U_cnn``, the
    plain form (``residual=False``) is, per coil ``c``::

        y_c = G [E^*(b)_c + lam y0_c]

    Because ``Z Z^H`` is not the identity, ``G`` is only an approximate
    inverse of ``E^*E + lam I`` for non-Cartesian sampling, and the plain form
    moves even a prior that already fits the data. The default residual form
    applies ``G`` to the residual of the same normal equations::

        y_c = y0_c + G [E^*(b)_c - E^*E(y0_c)]

    Both forms agree whenever ``G`` is exact. The output is ``U = S^H y``.
    Every ``L x L`` system is solved, never inverted.
    """
    if cfg.lam <= 0:
        raise ValueError("ds_dc needs lam > 0 so the per-location systems are regular")
    field = ops.field if field is None else field
    if field.image_size != tuple(ops.size) or field.rank != ops.rank:
        raise ValueError("kernel field does not match the encoding operator")
    y0 = apply_S(u_cnn, ops.maps)
    if residual:
        normal_y0 = toeplitz_field_apply(field, np.moveaxis(y0, -1, 1))
        r = ops.coil_adjoint(b) - np.moveaxis(normal_y0, 1, -1)
    else:
        r = ops.coil_adjoint(b) + cfg.lam * y0
    y = toeplitz_field_apply(field, np.moveaxis(r, -1, 1), shift=cfg.lam, invert=True)
    y = np.moveaxis(y, 1, -1)
    if residual:
        y = y0 + y
    return combine_S(y, ops.maps)


def check_field_definiteness(field: ToeplitzKernelField, lam: float) -> bool:
    """True when every ``W[n] + lam I`` is positive definite; warns otherwise."""
    lo = field_min_eigenvalue(field)
    if lo + lam <= 0:
        warnings.warn(f"W + lam I is indefinite at some locations (min eig {lo:.3g}, "
                      f"lam {lam:.3g}); the direct solve may be unstable",
                      RuntimeWarning, stacklevel=2)
        return False
    return True


# -- conjugate gradient ------------------------------------------------------

def _dot(a, b) -> float:
    return float(np.vdot(a, b).real)


def conjugate_gradient(apply_m: Callable[[np.ndarray], np.ndarray], rhs: np.ndarray,
                       x0: np.ndarray, n_iters: int,
                       callback: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    """Fixed-iteration CG for a Hermitian positive definite operator.

    Returns the last iterate; stops early only when the residual is exactly zero.
    """
    x = np.array(x0, dtype=np.complex128, copy=True)
    if n_iters == 0:
        return x
    r = rhs - apply_m(x)
    p = r.copy()
    rr = _dot(r, r)
    for it in range(n_iters):
        if rr == 0:
            break
        mp = apply_m(p)
        alpha = rr / _dot(p, mp)
        x += alpha * p
        r -= alpha * mp
        rr_new = _dot(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        if callback is not None:
            callback(it + 1, x)
    return x


def cg_dc(u_cnn: np.ndarray, b: np.ndarray, cfg: DCConfig, ops: SubspaceEncoding,
          callback: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    """``cfg.cg_iters`` CG iterations on ``(A^*A + lam I) U = A^* b + lam U_cnn``,
    started at ``U_cnn``."""
    if cfg.lam <= 0:
        raise ValueError("cg_dc needs lam > 0")
    if cfg.cg_iters == 0:
        return u_cnn.copy()
    rhs = ops.adjoint(b) + cfg.lam * u_cnn

    def apply_m(u):
        return ops.normal(u, cfg.normal_path) + cfg.lam * u

    return conjugate_gradient(apply_m, rhs, u_cnn, cfg.cg_iters, callback)


def dc_objective(u: np.ndarray, u_cnn: np.ndarray, b: np.ndarray, lam: float,
                 ops: SubspaceEncoding) -> float:
    """``||b - A U||^2 + lam ||U - U_cnn||^2``."""
    res = b - ops.forward(u)
    return _dot(res, res) + lam * _dot(u - u_cnn, u - u_cnn)


def coil_dc_objective(y: np.ndarray, y_prior: np.ndarray, b: np.ndarray, lam: float,
                      ops: SubspaceEncoding) -> float:
    """Coil-wise objective ``||E(Y) - b||^2 + lam ||Y - S U_cnn||^2``."""
    res = ops.coil_forward(y) - b
    return _dot(res, res) + lam * _dot(y - y_prior, y - y_prior)


def data_residual(u: np.ndarray, b: np.ndarray, ops: SubspaceEncoding) -> float:
    """``||A U - b||``."""
    return float(np.linalg.norm(ops.forward(u) - b))


def estimate_operator_norm(apply: Callable[[np.ndarray], np.ndarray], shape: Sequence[int],
                           n_iters: int = 10, seed: int = 0) -> float:
    """Spectral radius estimate by power iteration."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iters):
        y = apply(x)
        lam = float(np.linalg.norm(y))
        if lam == 0:
            return 0.0
        x = y / lam
    return lam


def normal_norm(ops: SubspaceEncoding, path: str = "direct", n_iters: int = 10) -> float:
    return estimate_operator_norm(lambda u: ops.normal(u, path), ops.factor_shape, n_iters)


def preconditioned_norm(ops: SubspaceEncoding, precond: Preconditioner,
                        path: str = "direct", n_iters: int = 10) -> float:
    def apply(u):
        g = ops.coil_normal(apply_S(u, ops.maps), path)
        g = np.moveaxis(precond.apply(np.moveaxis(g, -1, 1)), 1, -1)
        return combine_S(g, ops.maps)
    return estimate_operator_norm(apply, ops.factor_shape, n_iters)


# -- ADMM wavelet reference ---------------------------------------------------

def haar_forward(u: np.ndarray) -> np.ndarray:
    """Orthonormal single-level 2-D Haar transform over the first two axes.

    Subbands are laid out as ``[[LL, LH], [HL, HH]]``.
    """
    nx, ny = u.shape[:2]
    if nx % 2 or ny % 2:
        raise ValueError("Haar transform needs even image dimensions")
    s = 1.0 / np.sqrt(2.0)
    a = (u[0::2] + u[1::2]) * s
    d = (u[0::2] - u[1::2]) * s
    rows = np.concatenate([a, d], axis=0)
    a = (rows[:, 0::2] + rows[:, 1::2]) * s
    d = (rows[:, 0::2] - rows[:, 1::2]) * s
    return np.concatenate([a, d], axis=1)


def haar_adjoint(c: np.ndarray) -> np.ndarray:
    """Inverse (and adjoint) of :func:`haar_forward`."""
    nx, ny = c.shape[:2]
    s = 1.0 / np.sqrt(2.0)
    hx, hy = nx // 2, ny // 2
    rows = np.empty_like(c)
    rows[:, 0::2] = (c[:, :hy] + c[:, hy:]) * s
    rows[:, 1::2] = (c[:, :hy] - c[:, hy:]) * s
    out = np.empty_like(c)
    out[0::2] = (rows[:hx] + rows[hx:]) * s
    out[1::2] = (rows[:hx] - rows[hx:]) * s
    return out


def soft_threshold(z: np.ndarray, thresh: float) -> np.ndarray:
    """Complex shrinkage: reduce ``|z|`` by ``thresh``, keep the phase."""
    mag = np.abs(z)
    scale = np.maximum(mag - thresh, 0.0) / np.where(mag > 0, mag, 1.0)
    return z * scale


def wavelet_objective(u: np.ndarray, b: np.ndarray, lambda_w: float,
                      ops: SubspaceEncoding) -> float:
    """``0.5 ||b - A U||^2 + lambda_w ||Haar(U)||_1``, the problem
    :func:`admm_wavelet_recon` minimizes."""
    res = b - ops.forward(u)
    return 0.5 * _dot(res, res) + lambda_w * float(np.sum(np.abs(haar_forward(u))))


def admm_wavelet_recon(b: np.ndarray, ops: SubspaceEncoding, lambda_w: float,
                       n_iters: int = 20, rho: float | None = None, inner_iters: int = 10,
                       u_init: np.ndarray | None = None, path: str = "direct",
                       callback: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    """ADMM for ``min 0.5 ||b - A U||^2 + lambda_w ||Haar(U)||_1``.

    Splitting ``V = Haar(U)`` with scaled dual ``D``:

    * ``U``: ``inner_iters`` warm-started CG steps on
      ``(A^*A + rho I) U = A^* b + rho Haar^H (V - D)``
    * ``V <- shrink(Haar(U) + D, lambda_w / rho)``
    * ``D <- D + Haar(U) - V``

    ``rho`` defaults to 5% of the normal-operator norm.
    """
    if rho is None:
        rho = 0.05 * normal_norm(ops, path)
    if rho <= 0:
        raise ValueError("rho must be positive")
    if lambda_w < 0:
        raise ValueError("lambda_w must be non-negative")
    u = np.zeros(ops.factor_shape, dtype=np.complex128) if u_init is None \
        else np.array(u_init, dtype=np.complex128, copy=True)
    atb = ops.adjoint(b)
    v = haar_forward(u)
    dual = np.zeros_like(v)

    def apply_m(x):
        return ops.normal(x, path) + rho * x

    for it in range(n_iters):
        rhs = atb + rho * haar_adjoint(v - dual)
        u = conjugate_gradient(apply_m, rhs, u, inner_iters)
        wu = haar_forward(u)
        v = soft_threshold(wu + dual, lambda_w / rho)
        dual += wu - v
        if callback is not None:
            callback(it + 1, u)
    return u


# -- tuning -------------------------------------------------------------------

def log_grid(lo: float, hi: float, n: int) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def alpha_grid(norm: float, n: int = 10) -> np.ndarray:
    """Step sizes ``{0.1 .. 2.0} / ||normal||``, log-spaced."""
    return log_grid(0.1, 2.0, n) / norm


def lambda_grid(norm: float, n: int = 7) -> np.ndarray:
    """Regularization weights ``10^-4 .. 10^2`` relative to ``||normal||``."""
    return log_grid(1e-4, 1e2, n) * norm


def tune(run: Callable[[float, object], np.ndarray], candidates: Iterable[float],
         problems: Sequence[object], score: Callable[[np.ndarray, object], float]) -> tuple[float, float]:
    """Pick the candidate with the lowest mean score over validation problems.

    ``run(value, problem)`` produces a reconstruction; ``score(recon, problem)``
    rates it (lower is better). Returns ``(best_value, best_mean_score)``.
    """
    best, best_score = None, np.inf
    for value in candidates:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            s = float(np.mean([score(run(value, p), p) for p in problems]))
        if np.isfinite(s) and s < best_score:
            best, best_score = float(value), s
    if best is None:
        raise RuntimeError("no candidate produced a finite score")
    return best, best_score


# -- dispatch -------------------------------------------------------------------

RECON_METHODS = ("zf", "gd", "pgd", "ds", "cg", "admm")
DEFAULT_LAMBDA = {"ds": 0.3, "cg": 0.01, "admm": 1e-3}


def reconstruct(method: str, prior: np.ndarray, b: np.ndarray, ops: SubspaceEncoding,
                u0: np.ndarray, alpha: float | None = None, lam: float | None = None,
                cg_iters: int = 5, admm_iters: int = 20, normal_path: str = "direct") -> np.ndarray:
    """Run one reconstruction method by name.

    Unset parameters scale with the normal-operator norm ``n``: ``alpha = 1/n``,
    ``lam = DEFAULT_LAMBDA[method] * n``. For ``admm``, ``lam`` is relative to
    ``n * RMS(u0)`` and the prior is the starting point. ``zf`` returns ``u0``.
    """
    if method not in RECON_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {RECON_METHODS}")
    if method == "zf":
        return u0
    needs_norm = (alpha is None and method in ("gd", "pgd")) or \
        (lam is None and method in ("ds", "cg")) or method == "admm"
    norm = normal_norm(ops, normal_path) if needs_norm else None
    if method in ("gd", "pgd"):
        cfg = DCConfig(alpha=1.0 / norm if alpha is None else alpha, normal_path=normal_path)
        if method == "gd":
            return gd_dc(prior, b, cfg, ops)
        return pgd_dc(prior, b, cfg, build_ramp_preconditioner(ops.size), ops)
    if method in ("ds", "cg"):
        cfg = DCConfig(lam=DEFAULT_LAMBDA[method] * norm if lam is None else lam,
                       cg_iters=cg_iters, normal_path=normal_path)
        if method == "ds":
            return ds_dc(prior, b, ops, cfg)
        return cg_dc(prior, b, cfg, ops)
    rel = DEFAULT_LAMBDA["admm"] if lam is None else lam
    lam_w = rel * norm * float(np.sqrt(np.mean(np.abs(u0) ** 2)))
    return admm_wavelet_recon(b, ops, lam_w, n_iters=admm_iters, u_init=prior, path=normal_path)
