"""Visible-to-infrared image translation with a coarse-to-fine conditional GAN."""

__version__ = "0.1.0"
