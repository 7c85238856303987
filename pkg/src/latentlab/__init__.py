"""latentlab: a numerical laboratory for linear identifiability.

Simulated latent worlds with stationary positive-pair channels, nonlinear
mixings, a small reverse-mode gradient engine, alignment + Gaussianity
training objectives, and analytic spectral / control-theoretic oracles that
verify the identifiability story end to end.
"""

__version__ = "0.1.0"
