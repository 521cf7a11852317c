"""Numerical laboratory for an abnormal curve in a Martinet-type sub-Riemannian structure.

Modules: ``srmodel`` (structure), ``curves`` (horizontal paths), ``normality``,
``competitor`` (cut-and-correct construction), ``audit``, ``search`` and ``cli``.
"""

__version__ = "0.1.0"
