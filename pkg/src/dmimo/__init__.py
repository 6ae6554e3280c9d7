"""Positioning limits and multi-user tracking for distributed MIMO networks.

Subpackages by concern:

  eadf          sampled-pattern Fourier models of array responses
  signal_model  polarimetric line-of-sight observation model
  fim           information matrices, bounds, geometry analysis
  estimator     one-shot maximum-likelihood positioning
  tracking      Gaussian-mixture intensity filter and baseline tracker
  apselect      bound-aware access-point activation
  scenario      configuration, synthesis, experiment drivers, persistence
  fixtures      golden-artifact regeneration and verification
  mathcore      seeded streams, circular statistics, conditioning policy
"""

__version__ = "0.1.0"
