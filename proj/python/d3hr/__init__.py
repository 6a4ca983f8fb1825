"""Dataset distillation by DDIM inversion, Gaussian matching and group sampling."""

from ._d3hr import *  # noqa: F401,F403
