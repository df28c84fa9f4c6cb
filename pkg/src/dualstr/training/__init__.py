"""Optimization, schedules, checkpoints and the training loop."""
