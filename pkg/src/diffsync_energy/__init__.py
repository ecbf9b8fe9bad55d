"""Differential synchronization with pluggable cycle schedulers, plus a
deterministic discrete-event simulator that accounts radio and CPU energy
in percent-of-battery units.

Subpackages roughly follow the data path: content -> diff_patch -> sync_core
drive the protocol; scheduler decides when cycles run; energy_model and
simnet turn scenarios into energy numbers; workload generates edit traces;
cli wraps it all into an experiment runner.
"""

__version__ = "0.1.0"
