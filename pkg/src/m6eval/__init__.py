"""Scoring, risk modelling and forecast analysis tools for the M6 financial forecasting competition."""

__version__ = "0.1.0"
