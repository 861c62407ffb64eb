"""Statistical post-processing of ensemble cloud-cover forecasts on the okta scale."""

__version__ = "0.1.0"
