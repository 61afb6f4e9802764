"""Arbitrary-scale super-resolution with a frequency-weighted neural operator.

Library layout:

- ``tensor_ops``: FFTs, bicubic/spectral resampling, convolution kernels
- ``fileio``: PNG/PPM images and the raw tensor container
- ``autodiff``: reverse-mode tape over numpy arrays
- ``layers``: operator layers, score network, parameter (de)serialization
- ``diffusion``: degradation-aware forward process and its exact conditionals
- ``sampler``: time grids, RK4/RK45 integration, the sampling pipeline
- ``training``: score-matching loss, Adam, schedules, the training loop
- ``metrics``: PSNR/SSIM and the benchmarking harness
- ``dataset``: the bundled procedural texture patches
- ``cli``: the ``wfno`` command line
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "tensor_ops",
    "fileio",
    "autodiff",
    "layers",
    "diffusion",
    "sampler",
    "training",
    "metrics",
    "dataset",
    "config",
    "cli",
)


def __getattr__(name):
    # Lazy so the CLI entry point can pin thread-count env vars before numpy loads.
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module 'wfno' has no attribute {name!r}")


def __dir__():
    return sorted(list(_SUBMODULES) + ["__version__"])
