"""Diversity-aware GCN recommender: training, retrieval and evaluation."""

__version__ = "0.1.0"
