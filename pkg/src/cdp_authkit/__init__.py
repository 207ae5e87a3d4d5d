"""Synthetic copy-detection-pattern authentication toolkit.

End-to-end pipeline: template generation, print/acquire channel simulation
with copy attacks, spatial similarity metrics, one-class SVM and supervised
detectors, template-estimating autoencoder features, decision rules, and a
reproducible experiment harness with a command-line front end.
"""

__version__ = "0.1.0"
