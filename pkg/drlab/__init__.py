"""
drlab: reward search, physics priors and domain randomization for sim-to-real transfer.
"""
__version__ = "0.1.0"
