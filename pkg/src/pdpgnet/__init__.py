"""Joint load balancing / throughput control of a small cellular cluster.

Network simulator (tilt, A3 handover with CIOs, PRB scheduling, mobility)
driven by a vector-reward actor-critic agent, plus static brute-force
benchmarks.
"""

__version__ = "0.1.0"
