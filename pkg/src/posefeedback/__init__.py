"""Exercise-form feedback from 3D pose sequences."""

__version__ = "0.1.0"
