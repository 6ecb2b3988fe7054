"""FFT-accelerated (AIM) method-of-moments scattering with a slab-parallel 3-D FFT."""

__version__ = "0.1.0"
