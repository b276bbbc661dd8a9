"""Self-supervised ECG representation learning on numpy.

Student/teacher encoder pair trained with two complementary objectives: a
cross-record invariance loss that pulls a subject's two recordings together,
and a within-record tempo loss that asks pairwise strip distances to mirror
their time ordering. See README.md for the tour.
"""

__version__ = "0.1.0"

from . import backend

__all__ = ["backend", "__version__"]
