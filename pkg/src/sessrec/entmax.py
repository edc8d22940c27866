"""Bisection alpha-entmax: a normalizing transform interpolating between
softmax (alpha -> 1) and sparsemax (alpha = 2), with support for exact zeros.

The forward pass bisects the normalizing threshold tau for a fixed iteration
count; the backward pass uses the closed-form Jacobian-vector product of the
entmax mapping, including the derivative with respect to alpha so learned
alpha parameters receive gradients.
"""

from __future__ import annotations

import torch
from torch.autograd import Function

DEFAULT_BISECT_ITERS = 30

# learned alphas are clamped inside (1, 2): alpha == 1 breaks the exponent
# 1/(alpha-1) and sigmoid saturation would otherwise reach it exactly
ALPHA_EPS = 1e-4


class _EntmaxBisect(Function):
    """Expects ``alpha`` pre-expanded to the scores shape with dim -> 1."""

    @staticmethod
    def forward(ctx, scores, alpha, dim, n_iter):
        ctx.dim = dim
        d = scores.shape[dim]

        scaled = scores * (alpha - 1)
        max_val, _ = scaled.max(dim=dim, keepdim=True)
        tau_lo = max_val - 1.0
        tau_hi = max_val - (1.0 / d) ** (alpha - 1)

        probs = torch.clamp(scaled - tau_lo, min=0) ** (1 / (alpha - 1))
        f_lo = probs.sum(dim=dim, keepdim=True) - 1

        dm = tau_hi - tau_lo
        for _ in range(n_iter):
            dm = dm / 2
            tau_m = tau_lo + dm
            probs = torch.clamp(scaled - tau_m, min=0) ** (1 / (alpha - 1))
            f_m = probs.sum(dim=dim, keepdim=True) - 1
            tau_lo = torch.where(f_m * f_lo >= 0, tau_m, tau_lo)

        probs = probs / probs.sum(dim=dim, keepdim=True)
        ctx.save_for_backward(probs, alpha)
        return probs

    @staticmethod
    def backward(ctx, grad_output):
        probs, alpha = ctx.saved_tensors
        dim = ctx.dim

        support = torch.where(probs > 0, probs ** (2 - alpha), probs.new_zeros(()))
        grad_scores = grad_output * support
        q = grad_scores.sum(dim=dim, keepdim=True) / support.sum(dim=dim, keepdim=True)
        grad_scores = grad_scores - q * support

        grad_alpha = None
        if ctx.needs_input_grad[1]:
            log_terms = torch.where(probs > 0, probs * torch.log(probs),
                                    probs.new_zeros(()))
            entropy = log_terms.sum(dim=dim, keepdim=True)
            skewed = support / support.sum(dim=dim, keepdim=True)
            d_alpha = grad_output * (probs - skewed) / (alpha - 1) ** 2
            d_alpha = d_alpha - grad_output * (log_terms - skewed * entropy) / (alpha - 1)
            grad_alpha = d_alpha.sum(dim=dim, keepdim=True)

        return grad_scores, grad_alpha, None, None


def alpha_entmax(scores, alpha, mask=None, dim=-1, n_iter=DEFAULT_BISECT_ITERS):
    """alpha-entmax over ``dim``; masked entries are exactly zero.

    ``alpha`` is a scalar or a tensor broadcastable against the scores shape
    with ``dim`` collapsed to 1 (one alpha per attention row); every row must
    keep at least one unmasked entry.
    """
    if mask is not None:
        if not mask.any(dim=dim).all():
            raise ValueError("entmax over a fully masked row")
        scores = scores.masked_fill(~mask, float("-inf"))
    elif scores.shape[dim] == 0:
        raise ValueError("entmax over an empty row")

    if not torch.is_tensor(alpha):
        alpha = torch.tensor(float(alpha), dtype=scores.dtype, device=scores.device)
    row_shape = list(scores.shape)
    row_shape[dim] = 1
    alpha = alpha.expand(row_shape)
    return _EntmaxBisect.apply(scores, alpha, dim, n_iter)


def learned_alpha(h, weight, bias):
    """Map a representation to an attention exponent strictly inside (1, 2).

    Implements sigmoid(h @ weight + bias) + 1 with the sigmoid output kept
    away from exact saturation.
    """
    raw = torch.sigmoid(torch.nn.functional.linear(h, weight, bias))
    return torch.clamp(raw, ALPHA_EPS, 1 - ALPHA_EPS) + 1
