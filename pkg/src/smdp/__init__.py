"""
SMDP is a Python library and Command-Line Interface to solve inverse
problems over time-evolving physical systems by training a learned
correction alongside a reverse physics simulator, then integrating a
probability flow ODE or a reverse-time SDE backward in time.
"""

__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

from smdp.__version__ import version_info  # noqa: F401  (keeps smdp.__version__ bound to the submodule)
