"""Fusion heads over the concatenated self-attended and transported features.

Both heads consume a pair of n x d' matrices (d' twice the branch width):
the text side [attended, transported-from-image] and the image side
[attended, transported-from-text]. The co-attention head couples them with
a tanh affinity matrix; the attentional-reduction head pools each side
with an independent softmax-weighted MLP before a layer-normalized sum.
Final dense layers emit raw 2-class logits; softmax lives in the loss and
metric paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Node, Parameter
from .errors import DimensionError


@dataclass
class FusedInputs:
    """Row-major fused branch matrices, both n x d'."""

    c: Node
    s: Node

    def __post_init__(self):
        if self.c.shape != self.s.shape:
            raise DimensionError(f"fused inputs differ: {self.c.shape} vs {self.s.shape}")


def build_fused_inputs(f: Node, x_t: Node, h: Node, s_t: Node) -> FusedInputs:
    """Feature-axis concatenation: text side [f, x_t], image side [h, s_t]."""
    for name, m in (("f", f), ("x_t", x_t), ("h", h), ("s_t", s_t)):
        if m.shape != f.shape:
            raise DimensionError(f"{name} has shape {m.shape}, expected {f.shape}")
    return FusedInputs(dc.concat_cols(f, x_t), dc.concat_cols(h, s_t))


class CoAttentionHead:
    """Affinity-matrix co-attention over the two fused branches.

    The branch matrices enter in the column-major d' x n orientation used
    by the defining equations; the row-major inputs are transposed at
    entry. Attention weights over positions are produced for each side,
    the attended feature vectors are concatenated and classified by a
    dropout / dense(relu) / dropout / dense(2) tail.
    """

    def __init__(self, d_prime: int, k: int, rng: np.random.Generator, name: str = "co",
                 hidden: int = 128, dropout_concat: float = 0.5, dropout_hidden: float = 0.2):
        self.d_prime, self.k = d_prime, k
        self.dropout_concat = dropout_concat
        self.dropout_hidden = dropout_hidden
        self.w_l = Parameter(dc.xavier_uniform(rng, d_prime, d_prime), f"{name}.w_l")
        self.w_s = Parameter(dc.xavier_uniform(rng, k, d_prime), f"{name}.w_s")
        self.w_c = Parameter(dc.xavier_uniform(rng, k, d_prime), f"{name}.w_c")
        self.w_hs = Parameter(dc.xavier_uniform(rng, k, 1), f"{name}.w_hs")
        self.w_hc = Parameter(dc.xavier_uniform(rng, k, 1), f"{name}.w_hc")
        self.w1 = Parameter(dc.xavier_uniform(rng, 2 * d_prime, hidden), f"{name}.w1")
        self.b1 = Parameter(np.zeros((1, hidden)), f"{name}.b1")
        self.w_out = Parameter(dc.xavier_uniform(rng, hidden, 2), f"{name}.w_out")
        self.b_out = Parameter(np.zeros((1, 2)), f"{name}.b_out")

    def parameters(self) -> list[Parameter]:
        return [self.w_l, self.w_s, self.w_c, self.w_hs, self.w_hc,
                self.w1, self.b1, self.w_out, self.b_out]


def co_attention_forward(inputs: FusedInputs, head: CoAttentionHead, training: bool,
                         rng: np.random.Generator | None = None,
                         return_weights: bool = False):
    """Logits (1 x 2) from the co-attention head."""
    c_row, s_row = inputs.c, inputs.s
    c_col = dc.transpose(c_row)
    s_col = dc.transpose(s_row)
    affinity = dc.tanh_ew(dc.matmul(dc.matmul(c_row, head.w_l), s_col))
    ws_s = dc.matmul(head.w_s, s_col)
    wc_c = dc.matmul(head.w_c, c_col)
    h_s = dc.tanh_ew(dc.add(ws_s, dc.matmul(wc_c, affinity)))
    h_c = dc.tanh_ew(dc.add(wc_c, dc.matmul(ws_s, dc.transpose(affinity))))
    a_s = dc.softmax_rows(dc.matmul(dc.transpose(head.w_hs), h_s))
    a_c = dc.softmax_rows(dc.matmul(dc.transpose(head.w_hc), h_c))
    s_hat = dc.matmul(a_s, s_row)
    c_hat = dc.matmul(a_c, c_row)
    p = dc.concat_cols(c_hat, s_hat)
    p = dc.dropout(p, head.dropout_concat, training, rng)
    hidden = dc.relu(dc.add(dc.matmul(p, head.w1), head.b1))
    hidden = dc.dropout(hidden, head.dropout_hidden, training, rng)
    logits = dc.add(dc.matmul(hidden, head.w_out), head.b_out)
    if return_weights:
        return logits, a_c, a_s
    return logits


class AttnFusionHead:
    """Attentional-reduction fusion: each branch is pooled by softmax
    weights from its own FC(hidden)-ReLU-Dropout-FC(1) scorer (the two
    scorers share no parameters), then the pooled vectors are projected to
    a common width, summed, layer-normalized, and classified.
    """

    def __init__(self, d_prime: int, d_z: int, rng: np.random.Generator, name: str = "attnfuse",
                 hidden: int = 128, mlp_dropout: float = 0.1):
        self.d_prime, self.d_z = d_prime, d_z
        self.mlp_dropout = mlp_dropout
        self.c_w1 = Parameter(dc.xavier_uniform(rng, d_prime, hidden), f"{name}.c_w1")
        self.c_b1 = Parameter(np.zeros((1, hidden)), f"{name}.c_b1")
        self.c_w2 = Parameter(dc.xavier_uniform(rng, hidden, 1), f"{name}.c_w2")
        self.c_b2 = Parameter(np.zeros((1, 1)), f"{name}.c_b2")
        self.s_w1 = Parameter(dc.xavier_uniform(rng, d_prime, hidden), f"{name}.s_w1")
        self.s_b1 = Parameter(np.zeros((1, hidden)), f"{name}.s_b1")
        self.s_w2 = Parameter(dc.xavier_uniform(rng, hidden, 1), f"{name}.s_w2")
        self.s_b2 = Parameter(np.zeros((1, 1)), f"{name}.s_b2")
        self.w_c = Parameter(dc.xavier_uniform(rng, d_prime, d_z), f"{name}.w_c")
        self.w_s = Parameter(dc.xavier_uniform(rng, d_prime, d_z), f"{name}.w_s")
        self.ln_gain = Parameter(np.ones((1, d_z)), f"{name}.ln_gain")
        self.ln_bias = Parameter(np.zeros((1, d_z)), f"{name}.ln_bias")
        self.w_out = Parameter(dc.xavier_uniform(rng, d_z, 2), f"{name}.w_out")
        self.b_out = Parameter(np.zeros((1, 2)), f"{name}.b_out")

    def parameters(self) -> list[Parameter]:
        return [self.c_w1, self.c_b1, self.c_w2, self.c_b2,
                self.s_w1, self.s_b1, self.s_w2, self.s_b2,
                self.w_c, self.w_s, self.ln_gain, self.ln_bias,
                self.w_out, self.b_out]


def _reduction_weights(m: Node, w1, b1, w2, b2, rate, training, rng) -> Node:
    n = m.rows
    h = dc.relu(dc.add(dc.matmul(m, w1), dc.tile_rows(b1, n)))
    h = dc.dropout(h, rate, training, rng)
    scores = dc.add(dc.matmul(h, w2), dc.tile_rows(b2, n))
    return dc.softmax_rows(dc.transpose(scores))


def attn_fusion_forward(inputs: FusedInputs, head: AttnFusionHead, training: bool,
                        rng: np.random.Generator | None = None,
                        return_weights: bool = False):
    """Logits (1 x 2) from the attentional-reduction head."""
    alpha_c = _reduction_weights(inputs.c, head.c_w1, head.c_b1, head.c_w2, head.c_b2,
                                 head.mlp_dropout, training, rng)
    alpha_s = _reduction_weights(inputs.s, head.s_w1, head.s_b1, head.s_w2, head.s_b2,
                                 head.mlp_dropout, training, rng)
    c_tilde = dc.matmul(alpha_c, inputs.c)
    s_tilde = dc.matmul(alpha_s, inputs.s)
    z = dc.layer_norm(dc.add(dc.matmul(c_tilde, head.w_c), dc.matmul(s_tilde, head.w_s)),
                      head.ln_gain, head.ln_bias)
    logits = dc.add(dc.matmul(z, head.w_out), head.b_out)
    if return_weights:
        return logits, alpha_c, alpha_s
    return logits
