"""Delayed boundary feedback stabilization of a viscous fluid coupled to a
damped elastic plate with Navier slip conditions.

Modules follow the computational pipeline: ``geometry`` (deforming
domains and Piola maps), ``transform_ops`` (operators on the fixed reference
domain and their linear/quadratic splitting), ``discretization`` (spectral
Galerkin matrices), ``spectral_analysis`` (eigenstructure and Hautus test),
``delay_control`` (predictor feedback synthesis), ``simulation`` (time
integration) and ``cli``.
"""

__version__ = "0.1.0"
