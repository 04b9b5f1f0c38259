"""Intraday volume forecasting toolkit.

Pipeline: LOB ingestion -> bin statistics -> predictor panel -> component
benchmark and ML forecasts under per-stock / clustered / pooled training
schemes -> VWAP replication and passive-fill replay.
"""

__version__ = "0.1.0"
