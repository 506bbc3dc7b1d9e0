"""Diffusion-based enhancement of EMG-predicted log Mel spectrograms.

Modules: ``ndtensor`` (reverse-mode graph, Adam, gradient checks), ``signal``
and ``corpus`` (features, Griffin-Lim, synthetic paired data), ``align``
(joint cost DTW), ``encoder``, ``diffusion``, ``scorenet``, ``metrics`` and
``cli``.
"""

__version__ = "0.1.0"
