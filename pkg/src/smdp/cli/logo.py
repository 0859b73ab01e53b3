"""
This submodule contains the constants to display the logo in the CLI
module of SMDP.
"""


__author__ = "Jérémie Lumbroso <lumbroso@cs.princeton.edu>"

__all__ = [
    "SMDP_LOGO_5L",
    "SMDP_TAGLINE",
]


SMDP_LOGO_5L = r"""
  ____  __  __ ____  ____
 / ___||  \/  |  _ \|  _ \
 \___ \| |\/| | | | | |_) |
  ___) | |  | | |_| |  __/
 |____/|_|  |_|____/|_|
"""[1:]
"""
Logo of SMDP, 5 lines tall, printed at the top of the help and the
``reproduce`` banner.
"""

SMDP_TAGLINE = "score matching via differentiable physics"
"""
One-line description printed under :py:data:`SMDP_LOGO_5L`.
"""
