"""Dynamic network link prediction with an encoder / stacked-LSTM / decoder model."""
from .errors import (ConfigError, DivergenceError, ElstmdError, ParseError, ShapeError,
                     UndefinedMetricError, UndefinedMetricWarning)
from .graph_store import (DatasetSplit, SampleWindow, SnapshotSequence, TemporalEdge, TemporalEdgeList,
                          build_snapshots, filter_transient_links, ingest_edge_list, make_windows,
                          split_windows)
from .model import ModelConfig, ModelParams, binarize, embed, forward, init_model
from .training import LossConfig, TrainHistory, backward, train

__version__ = "0.1.0"
