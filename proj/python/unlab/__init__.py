"""Desk-scale machine-unlearning laboratory.

Thin Python façade over the C++ core: world synthesis, the tiny
autoregressive model, unlearning objectives, evaluation metrics, robustness
attacks and the end-to-end pipeline.
"""

from ._unlab import *  # noqa: F401,F403
from ._unlab import __version__  # noqa: F401
