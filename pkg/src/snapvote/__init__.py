"""Snapshot ensembles for deep networks trained on little labeled data.

Modules: ``nn`` (layers, forward/backward), ``trainer`` (SGD with snapshot
capture), ``pretrain`` (denoising autoencoders), ``forest`` (CART random
forest), ``ensemble`` (voting and stacking), and the harness modules
``config``, ``experiment``, ``metrics``, ``storage`` and ``cli``.
"""

__version__ = "0.1.0"
