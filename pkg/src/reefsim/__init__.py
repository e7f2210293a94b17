"""Weakly supervised visual similarity: tracked-patch mining, triplet
metric learning, exemplar heatmaps, and heatmap-driven navigation."""

__version__ = "0.1.0"
