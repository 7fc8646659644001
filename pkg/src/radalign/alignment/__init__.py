"""Dual-encoder contrastive alignment of CT volumes and reports."""

from .embeddings import EmbeddingTable, embed_corpus, read_table, write_table
from .losses import clip_loss, clip_loss_grad, similarity_matrix
from .model import DualEncoder, build_dual_encoder
from .text import HashingTextEncoder, tokenize
from .train import AlignState, align_train, load_align_state, resolve_mode, save_align_state

__all__ = [
    "AlignState",
    "DualEncoder",
    "EmbeddingTable",
    "HashingTextEncoder",
    "align_train",
    "build_dual_encoder",
    "clip_loss",
    "clip_loss_grad",
    "embed_corpus",
    "load_align_state",
    "read_table",
    "resolve_mode",
    "save_align_state",
    "similarity_matrix",
    "tokenize",
    "write_table",
]
