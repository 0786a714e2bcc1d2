"""docmark: versioned text documents, checked incrementally and in parallel.

Clients stream edits against named document nodes; pluggable checkers
process the changed parts, reusing cached results for unchanged material;
diagnostics and markup come back anchored to exact character offsets, live.
"""

__version__ = "0.1.0"
