"""Scale quantities, Harnack classifiers and Monte Carlo probes for
isotropic unimodal jump processes."""

__version__ = "0.1.0"
