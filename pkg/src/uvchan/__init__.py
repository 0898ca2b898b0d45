"""Deterministic geometry-based stochastic channel simulator for
multi-UAV-to-multi-vehicle mmWave links.

The package is organised around the simulation pipeline:

``params``     fitted distribution families, the built-in parameter table,
               inverse-transform sampling, and power-delay fitting.
``geometry``   trajectories, angle/frame conventions, and scatterer placement.
``evolution``  the shared scatterer/cluster environment, visibility regions,
               survival/birth dynamics, and twin-cluster matching.
``cir``        per-link tap synthesis (LoS, ground reflection, NLoS) and the
               frequency-dependent transfer function.
``stats``      correlation functions, delay spread, stationarity intervals,
               and Doppler spectra.
``config``     scenario description, validation, and file I/O.
``runner``     run/sweep orchestration with deterministic outputs.
``cli``        the ``uvchan`` command-line entry point.
"""

__version__ = "0.1.0"
