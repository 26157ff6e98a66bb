"""Self-hosted time-series forecasting platform.

Upload CSVs, classify column roles, train and backtest a model zoo through
a job queue, read normalized and de-normalized accuracy metrics, get
LLM-assisted parameter recommendations, and launch new forecasts from
trained models.
"""

__version__ = "0.1.0"
