"""
Contour snake: energy-prior guided contour evolution on synthetic phantoms
"""
__version__ = '1.0.0'
