"""Utilities: numerics, autograd, image files and reporting."""
