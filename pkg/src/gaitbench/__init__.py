"""Dual-modal gait recognition on synthetic walkers: silhouettes, knee-row
signatures, RGB, a small numpy autodiff engine and Rank-1 evaluation."""

__version__ = "0.1.0"
