"""Multi-view spatial graph convolution Seq2Seq traffic forecasting."""
from .data import SeriesTable, Windows, WindowedDataset, ingest, synthesize, windowize
from .estimator import MSGCForecaster
from .graph import TrafficGraph
from .network import ModelConfig, MSGCNetwork
from .training import HistoricalAverage, ZScoreScaler, metrics

__all__ = ["HistoricalAverage", "MSGCForecaster", "MSGCNetwork", "ModelConfig", "SeriesTable",
           "TrafficGraph", "Windows", "WindowedDataset", "ZScoreScaler", "ingest", "metrics",
           "synthesize", "windowize"]
__version__ = "0.1.0"
