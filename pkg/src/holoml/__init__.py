"""Particle localization in inline holograms with a residual U-net.

Modules: ``optics`` (forward model), ``preprocess`` (reconstruction and
input stacks), ``dataset``, ``autodiff``, ``unet``, ``losses``, ``trainer``,
``postprocess`` (extraction, pairing, metrics) and ``cli``.
"""

__version__ = "0.1.0"
