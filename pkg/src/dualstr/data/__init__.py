"""Synthetic data generation, dataset files and metrics."""
