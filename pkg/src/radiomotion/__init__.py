"""Dynamic radio-map sequence datasets and ConvLSTM forecasting, desk scale."""

__version__ = "0.1.0"
