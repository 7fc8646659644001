from __future__ import annotations

import re
import zlib

import torch
import torch.nn as nn

_SENTENCE = re.compile(r"[^.!?\n;]+")
_WORD = re.compile(r"[a-z0-9]+")
NEGATION_CUES = frozenset({"no", "not", "without", "absent", "negative"})


def tokenize(text: str) -> list[str]:
    """Lower-cased word tokens; every token of a sentence holding a negation cue gets a ``NOT_`` prefix."""
    tokens = []
    for sentence in _SENTENCE.findall(text.lower()):
        words = _WORD.findall(sentence)
        negated = any(w in NEGATION_CUES for w in words)
        tokens.extend(f"NOT_{w}" if negated and w not in NEGATION_CUES else w for w in words)
    return tokens


def bucket(token: str, n_buckets: int) -> int:
    return zlib.crc32(token.encode("utf-8")) % n_buckets


class HashingTextEncoder(nn.Module):
    """Mean of hashed token embeddings; a deterministic stand-in for a pretrained report encoder."""

    def __init__(self, n_buckets: int = 4096, dim: int = 128):
        super().__init__()
        self.n_buckets = n_buckets
        self.out_dim = dim
        self.embedding = nn.EmbeddingBag(n_buckets, dim, mode="mean")
        nn.init.normal_(self.embedding.weight, std=dim ** -0.5)

    def token_ids(self, texts: list[str]) -> tuple[torch.Tensor, torch.Tensor]:
        ids, offsets = [], []
        for text in texts:
            offsets.append(len(ids))
            toks = tokenize(text) or ["<empty>"]
            ids.extend(bucket(t, self.n_buckets) for t in toks)
        return torch.tensor(ids, dtype=torch.long), torch.tensor(offsets, dtype=torch.long)

    def forward(self, texts: list[str]) -> torch.Tensor:
        ids, offsets = self.token_ids(list(texts))
        return self.embedding(ids, offsets)
