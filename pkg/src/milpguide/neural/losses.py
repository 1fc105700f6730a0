"""Pairwise margin ranking loss and InfoNCE contrastive loss.

Both accept python floats / numpy arrays (returning floats) or torch tensors
(returning differentiable tensors).
"""
from __future__ import annotations

import math

import numpy as np
import torch

MARGIN = 0.1
TAU = 0.1


def rank_loss(s1, s2, y, m: float = MARGIN):
    """max(0, -y (s1 - s2) + m); y = +1 means the first set should score higher."""
    if not m > 0:
        raise ValueError("margin must be positive")
    if isinstance(s1, torch.Tensor) or isinstance(s2, torch.Tensor):
        return torch.clamp(-y * (s1 - s2) + m, min=0.0)
    return max(0.0, -float(y) * (float(s1) - float(s2)) + m)


def _lse(v):
    mx = float(np.max(v))
    return mx + math.log(float(np.sum(np.exp(v - mx))))


def info_nce_loss(output, positives, negatives, tau: float = TAU):
    """-(1/|P|) sum_a log( exp(a.pi/tau) / sum_{a' in N U {a}} exp(a'.pi/tau) )."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if len(positives) == 0 or len(negatives) == 0:
        raise ValueError("positive and negative sets must be non-empty")
    if isinstance(output, torch.Tensor):
        P = torch.as_tensor(np.asarray(positives, dtype=float), dtype=output.dtype)
        N = torch.as_tensor(np.asarray(negatives, dtype=float), dtype=output.dtype)
        sp = P @ output / tau                         # (|P|,)
        sn = N @ output / tau                         # (|N|,)
        logits = torch.cat([sp.unsqueeze(1), sn.unsqueeze(0).expand(sp.shape[0], -1)], dim=1)
        return (torch.logsumexp(logits, dim=1) - sp).mean()
    pi = np.asarray(output, dtype=float)
    sp = np.asarray(positives, dtype=float) @ pi / tau
    sn = np.asarray(negatives, dtype=float) @ pi / tau
    return float(np.mean([_lse(np.concatenate([[s], sn])) - s for s in sp]))
