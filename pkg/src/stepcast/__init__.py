"""Next-day step-count forecasting from wearable activity and app engagement."""

__version__ = "0.1.0"
