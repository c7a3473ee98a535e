"""Adversarial invariant-representation learning for multichannel trials.

Subpackages and modules:

* ``nncore``: functional layers with hand-written backward passes
* ``model``: the compact convolutional encoder with classifier and adversary heads
* ``training``: alternating adversarial optimization with early stopping
* ``datasynth``: synthetic texture/movement trials with controllable leakage
* ``surface``: band-limited fractal height maps
* ``harness``: archives, cross-validation, sweeps, reports and the CLI
"""

__version__ = "0.1.0"
