"""Mixed-noise removal for hyperspectral cubes with a spatial-spectral gradient network."""
from .gradients import GradientStack, build_gradient_stack, spatial_gradients, spectral_gradients, spectral_window
from .hsi_core import (
    HsiCube,
    PatchSample,
    denormalize_per_band,
    extract_patches,
    load_cube,
    normalize_per_band,
    resize_bilinear,
    rotate90,
    save_cube,
    synthetic_cube,
)
from .metrics import MetricsReport, evaluate, msa, psnr, ssim
from .model import SsgnArch, SsgnModel, init_model, load_model, reconstruct, save_model, zero_model
from .noise import NoiseCase, NoiseManifest, NoiseSpec, measure_snr, simulate_case
from .pipeline import denoise_array, denoise_cube
from .training import TrainConfig, desk_profile, paper_profile, train

__version__ = "0.1.0"
