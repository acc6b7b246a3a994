"""Numerical laboratory for discounted tabular MDPs under mixing assumptions."""
from __future__ import annotations

__version__ = "0.1.0"
