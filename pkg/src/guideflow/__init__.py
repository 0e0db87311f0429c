"""Desk-scale diffusion guidance experiments with flow postprocessing.

Submodules:

* ``mlp`` / ``params`` / ``optim`` / ``checkpoint`` - dense-network substrate
* ``datasets`` - seeded 1D Gaussian and 2D fractal generators
* ``diffusion`` - DDPM schedule, training, ancestral sampling
* ``classifier`` - noise-aware classifiers with input gradients
* ``guidance`` - vanilla / classifier / classifier-free samplers on shared noise
* ``flow`` - top-k nearest-neighbor rectified-flow postprocessing
* ``analysis`` - gap, boundary-repulsion, and NN-distance reports
* ``cli`` - reproducible pipeline commands
"""

__version__ = "0.1.0"
