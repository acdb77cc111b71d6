"""Forecasting engine for term-structure futures: Level-1 tick features,
signed correlation graphs, a multi-channel GCN-LSTM trained with
economically motivated losses, linear baselines, and walk-forward
backtesting."""

__version__ = "0.1.0"
