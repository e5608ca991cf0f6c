"""GPR-assisted multimodal odometry.

Radar B-scans are reduced to sparse subsurface feature matrices (SFMs), SFM
pairs are aligned to measure travel distance, and the distances are fused
with IMU preintegration and wheel odometry in a factor graph.
"""

__version__ = "0.1.0"
