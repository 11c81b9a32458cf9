"""Spike detection in short time series."""
