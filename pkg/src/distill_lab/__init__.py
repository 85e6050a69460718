"""Desk-scale laboratory for few-step diffusion distillation on analytic targets."""

__version__ = "0.1.0"
