"""Insertion-aware relative positional encoding for text post-editing."""

from .editor import EditOp, Editor, InsertionEstimate, perplexity
from .encoding import Vocabulary, build_vocab
from .model import ModelConfig, XLEditorModel, load_model_bundle, save_model_bundle
from .objectives import TrainConfig, train
from .styler import TransferConfig, transfer

__version__ = "0.1.0"
