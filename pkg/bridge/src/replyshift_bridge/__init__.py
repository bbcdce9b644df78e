"""Neural reference backend for the replyshift wire protocol."""

__version__ = "0.1.0"

from .model import BridgeModel, BridgeVocab, GruLm, load_corpus, train_model
from .server import BridgeSession, serve

__all__ = ["BridgeModel", "BridgeSession", "BridgeVocab", "GruLm",
           "load_corpus", "serve", "train_model"]
