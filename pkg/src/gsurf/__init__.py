"""Joint 2D Gaussian splatting and neural SDF surface reconstruction on the CPU."""

__version__ = "0.1.0"
