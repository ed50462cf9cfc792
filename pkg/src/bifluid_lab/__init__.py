"""Desk-scale laboratory for a two-fluid compressible MHD model.

Subpackages: closure (pressure law and potentials), grid (fields and
discrete calculus), solver (regularized time stepping), diagnostics
(energy ledgers and defect functionals), harness (sweeps and
verification), io_cli (configs, persistence, command line).
"""

__version__ = "0.1.0"
