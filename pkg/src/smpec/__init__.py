"""Zeroth-order implicit schemes for stochastic MPECs."""
__version__ = "0.1.0"
