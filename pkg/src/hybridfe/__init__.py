"""Hybridized finite elements on triangles.

HDG discretizations of steady diffusion and the biharmonic problem, the
condensed weak-form systems they can be rewritten into, and numerical
audits that certify the two assembly routes produce identical skeleton
systems and solutions.
"""

from . import biharmonic, cli, diffusion, errors, fespace, linalg, mesh, verify, weakops  # noqa: F401

__version__ = "0.1.0"
