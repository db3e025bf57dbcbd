"""Physics-embedded Gaussian processes for traffic state estimation.

Subpackages by concern: ``data`` (grids, fields, observations), ``physics``
(fundamental diagram, pressure law, linearization constants), ``kernels``
(operator-embedded covariances), ``svgp`` (sparse variational inference and
physical maps), ``baselines``, ``diagnostics``, ``sim`` (synthetic truth),
``metrics`` and ``cli``.
"""

__version__ = "0.1.0"

import jax as _jax

# every numerical module relies on double precision
_jax.config.update("jax_enable_x64", True)
