"""Monotone convex order for McKean-Vlasov particle schemes."""

__version__ = "0.1.0"
