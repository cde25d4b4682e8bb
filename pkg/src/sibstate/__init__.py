"""Joint SOC/SOH/capacity estimation for sodium-ion cells from charging profiles."""

__version__ = "0.1.0"
