"""Cross-modal refinement toolkit: synthetic ground truth, joint refinement
network for flow / segmentation / normals, metrics and experiment suites."""

__version__ = "0.1.0"
