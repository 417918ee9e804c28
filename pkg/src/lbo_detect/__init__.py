"""Lean blowout detection from acoustic pressure time series.

Recurrent next-step predictors (LSTM, RNN) trained at the blowout condition,
a Gaussian HMM forecaster and a translational-error statistic, each turned
into a healthy/unhealthy detector by a threshold calibrated on a reference
protocol.
"""

__version__ = "0.1.0"
