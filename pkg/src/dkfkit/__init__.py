"""Discriminative Kalman filtering toolkit."""
