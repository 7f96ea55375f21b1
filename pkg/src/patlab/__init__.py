"""Forward simulation, time moments and spectral tools for thermo/photoacoustic
wave problems with variable sound speed."""

__version__ = "0.1.0"
