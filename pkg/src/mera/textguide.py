"""Cross-attention from residue queries onto text tokens.

Single-head scaled dot-product attention, no output projection, no
residual: Q = h_seq W_Q, K = text W_K, V = text W_V, then
softmax(Q K^T / sqrt(d_a)) V. Produces one row per residue regardless of
the text length.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .errors import EmptyInputError
from .matrix import as_matrix
from .params import ParameterStore

__all__ = ["cross_attend", "cross_attend_nodes"]


def cross_attend_nodes(
    tape: Tape,
    params: ParameterStore,
    h_seq: Node,
    text_emb: np.ndarray,
) -> Node:
    if text_emb.shape[0] == 0:
        raise EmptyInputError(
            "text embedding has zero tokens; disable the text modality instead"
        )
    text = tape.constant(text_emb)
    q = ad.matmul(h_seq, tape.parameter(params, "text.WQ"))
    k = ad.matmul(text, tape.parameter(params, "text.WK"))
    v = ad.matmul(text, tape.parameter(params, "text.WV"))
    d_a = q.value.shape[1]
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(d_a))
    attn = ad.softmax_rows(scores, 1.0)
    return ad.matmul(attn, v)


def cross_attend(h_seq, text_emb, params: ParameterStore) -> np.ndarray:
    """Plain-array cross-attention; same code path as the node version."""
    tape = Tape()
    out = cross_attend_nodes(
        tape,
        params,
        tape.constant(as_matrix(h_seq, "h_seq")),
        as_matrix(text_emb, "text embedding"),
    )
    return out.value
