"""Closed-loop simulation, detectors and Monte-Carlo experiment harnesses."""
