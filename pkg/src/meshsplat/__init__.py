"""meshsplat: mesh-bound Gaussian splatting avatar runtime and baking harness."""

__version__ = "0.1.0"
