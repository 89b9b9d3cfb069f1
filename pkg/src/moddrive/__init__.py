"""moddrive: a desk-scale modular driving stack.

A learned categorical decision policy sits on top of deterministic planning
(cubic Bezier paths, QP velocity profiles) and PID control inside a 2D
traffic simulator; the decision heads are trained adversarially against
demonstrated low-level controls.
"""

__version__ = "0.1.0"
