"""
Fisheye BEV projection engine.

Lifts features from distorted fisheye cameras into a bird's-eye-view grid,
pools them across cameras and scores the result against synthetic ground truth.
"""

__version__ = "1.0.0"
