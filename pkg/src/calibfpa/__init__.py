"""Compressive focal-plane-array imaging with online measurement calibration.

Submodules
----------
optics    PSF synthesis, convolution, box downsampling, measurement simulation
aperture  coded-aperture patterns, alignment markers, snapshot schedules
sysmat    dense / block-diagonal system matrices and normal-equation solves
tensornet small numpy layer kernel (conv, batch norm, Adam, l1 loss)
calib     calibration network, its training loop, Raw and Richardson-Lucy
recon     plug-and-play ADMM reconstruction and the TV denoiser
pipeline  scene sources, dataset synthesis, evaluation harness
metrics   pSNR and SSIM
tensorio  binary tensor container and 16-bit PGM helpers
config    key = value run configuration files
cli       command line entry point
"""

from calibfpa.errors import NumericalError

__version__ = "0.1.0"

__all__ = ["NumericalError", "__version__"]
