"""Loss-landscape toolkit: sample around trained optima, embed with PHATE, summarise with persistence."""

__version__ = "0.1.0"
