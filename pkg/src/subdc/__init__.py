"""Data-consistency layers for non-Cartesian subspace dynamic MRI reconstruction."""

from .dc import (DCConfig, admm_wavelet_recon, build_ramp_preconditioner, cg_dc, ds_dc, gd_dc,
                 pgd_dc, zero_filled_init)
from .encoding import SubspaceEncoding, adjoint_APhi, forward_APhi, normal_APhi
from .metrics import nrmse, psnr, ssim
from .subspace import TemporalBasis, ToeplitzKernelField
from .tensorio import read_tensor, write_tensor
from .trajectory import SamplingSchedule, Trajectory
from .transform import GriddingPlan

__version__ = "0.1.0"
