"""Spectral boundary-integral solver for 2D time-domain acoustic transmission.

Couples a per-subdomain Chebyshev Petrov-Galerkin discretization of the
Laplace-domain boundary integral operators with convolution quadrature in
time. See README.md for the CLI and the output file formats.
"""

__version__ = "0.1.0"
