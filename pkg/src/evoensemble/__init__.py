"""Evolutionary-tuned bagging, stacking and voting ensembles for appliance
energy regression."""

from . import dataio, ensemble, learners, metaopt, metrics, outlier

__version__ = "0.1.0"

__all__ = ["dataio", "outlier", "learners", "ensemble", "metaopt", "metrics", "__version__"]
