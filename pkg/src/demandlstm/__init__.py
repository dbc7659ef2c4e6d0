"""Global peephole-LSTM demand forecasting across related sales series."""
__version__ = "0.1.0"
