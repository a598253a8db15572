"""Bond-based peridynamic brittle fracture of a single-edge-notched specimen."""

__version__ = "0.1.0"
