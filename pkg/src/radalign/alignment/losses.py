"""Similarity matrix and symmetric contrastive loss.

There is no temperature: similarities enter the softmax as they are.
"""

from __future__ import annotations

import torch

TEMPERATURE = 1.0
NORMALIZED_COEFFICIENT = 1.0
UNNORMALIZED_COEFFICIENT = 0.1


def similarity_matrix(Z, T, l2_normalize: bool) -> torch.Tensor:
    """``S[i, j] = z_i . t_j``, on unit-normalised rows when ``l2_normalize``."""
    Z = torch.as_tensor(Z)
    T = torch.as_tensor(T)
    if Z.dim() != 2 or T.dim() != 2 or Z.shape[1] != T.shape[1]:
        raise ValueError(f"embedding shapes disagree: {tuple(Z.shape)} vs {tuple(T.shape)}")
    if l2_normalize:
        zn = Z.norm(dim=1, keepdim=True)
        tn = T.norm(dim=1, keepdim=True)
        if torch.any(zn == 0) or torch.any(tn == 0):
            raise ValueError("cannot L2-normalise a zero-norm embedding")
        Z = Z / zn
        T = T / tn
    return Z @ T.T


def clip_loss(S: torch.Tensor, coefficient: float = 1.0) -> torch.Tensor:
    """``coefficient`` times the mean of row-wise and column-wise cross-entropy against the diagonal."""
    S = torch.as_tensor(S)
    if S.dim() != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {tuple(S.shape)}")
    if coefficient <= 0:
        raise ValueError("loss coefficient must be positive")
    S = S / TEMPERATURE
    diag = torch.diagonal(S)
    row = torch.logsumexp(S, dim=1) - diag  # image -> text
    col = torch.logsumexp(S, dim=0) - diag  # text -> image
    return coefficient * 0.5 * (row.mean() + col.mean())


def clip_loss_grad(S: torch.Tensor, coefficient: float = 1.0) -> torch.Tensor:
    """Closed-form dL/dS: (softmax over rows + softmax over columns - 2I) * coefficient / (2N)."""
    S = torch.as_tensor(S)
    n = S.shape[0]
    eye = torch.eye(n, dtype=S.dtype)
    return coefficient * (torch.softmax(S, dim=1) + torch.softmax(S, dim=0) - 2 * eye) / (2 * n)
