"""End-to-end model: frozen random encoders, transport-kernel length
equalization, context attention (text) plus gated attention (image),
two-way transport adaptation, and a fusion head.

Raw modality matrices pass through fixed orthogonal encoders (stand-ins
for pretrained feature extractors; the trainable mechanisms only ever see
representation matrices). The exact transport plans are recomputed every
forward pass from current values and treated as constants by the backward
pass; ``freeze_ot_plans`` pins them for finite-difference checking.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import calibration as calib
from . import context_attention as ctx
from . import diffcore as dc
from . import gated_attention as gated
from . import transport
from .diffcore import Node, Parameter
from .errors import DimensionError, ParameterError
from .fusion import (AttnFusionHead, CoAttentionHead, attn_fusion_forward,
                     build_fused_inputs, co_attention_forward)

CO_ATTENTION = "co_attention"
ATTN_FUSION = "attn_fusion"
CONCAT = "concat"

OTK = "otk"
REPEAT = "repeat"
IDENTITY = "identity"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture settings; defaults follow the reference hyperparameters
    (d_q = d_k = 64, d_g = 64, k = 40, d_z = 128, smoothing 0.001)."""

    d: int = 32
    seq_len: int = 12
    strategy: str = "deep"
    layers: int | None = None
    fusion: str = ATTN_FUSION
    d_q: int = 64
    d_k: int = 64
    d_g: int = 64
    k: int = 40
    d_z: int = 128
    label_smoothing_alpha: float = 0.001
    otk_mode: str = OTK
    otk_eps: float = 0.1
    otk_iters: int = 30
    ot_enabled: bool = True
    context_gate_override: float | None = None
    image_mask_ones: bool = False

    def __post_init__(self):
        if self.fusion not in (CO_ATTENTION, ATTN_FUSION, CONCAT):
            raise ParameterError(f"unknown fusion {self.fusion!r}")
        if self.otk_mode not in (OTK, REPEAT, IDENTITY):
            raise ParameterError(f"unknown otk_mode {self.otk_mode!r}")
        if not 0.0 <= self.label_smoothing_alpha <= 1.0:
            raise ParameterError("label_smoothing_alpha must be in [0, 1]")
        ctx.ContextStrategy.default(self.strategy)  # validates the name

    def context_strategy(self) -> ctx.ContextStrategy:
        if self.layers is None:
            return ctx.ContextStrategy.default(self.strategy)
        return ctx.ContextStrategy(self.strategy, self.layers)


def _orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


class Model:
    """Trainable two-branch fusion classifier."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        streams = np.random.SeedSequence((seed, 17)).spawn(4)
        enc_rng = np.random.default_rng(streams[0])
        self.e_text = _orthogonal(enc_rng, cfg.d)
        self.e_img = _orthogonal(enc_rng, cfg.d)

        self.stack = ctx.ContextStack.build(
            cfg.d, cfg.d_q, cfg.d_k, cfg.context_strategy(),
            np.random.default_rng(streams[1]), "text",
        )
        self.gated_layer = gated.GatedSelfAttentionLayer(
            cfg.d, cfg.d_g, np.random.default_rng(streams[2]), "image",
        )

        head_rng = np.random.default_rng(streams[3])
        d_prime = 2 * cfg.d
        self.co_head = self.attn_head = self.concat_w = self.concat_b = None
        if cfg.fusion == CO_ATTENTION:
            self.co_head = CoAttentionHead(d_prime, cfg.k, head_rng)
        elif cfg.fusion == ATTN_FUSION:
            self.attn_head = AttnFusionHead(d_prime, cfg.d_z, head_rng)
        else:
            self.concat_w = Parameter(dc.xavier_uniform(head_rng, 2 * d_prime, 2), "concat.w")
            self.concat_b = Parameter(np.zeros((1, 2)), "concat.b")

        self.references = None
        if cfg.otk_mode == OTK:
            self.references = Parameter(
                dc.xavier_uniform(head_rng, cfg.seq_len, cfg.d), "otk.references",
            )
            self._refs_initialized = False
        self.smoothing = calib.SmoothingConfig(cfg.label_smoothing_alpha, 2)
        self.last_otk_violation = 0.0
        self._plan_cache: list[np.ndarray] | None = None
        self._plan_cursor = 0

    # -- parameters -------------------------------------------------------

    def parameters(self) -> list[Parameter]:
        params = self.stack.parameters() + self.gated_layer.parameters()
        if self.co_head is not None:
            params += self.co_head.parameters()
        if self.attn_head is not None:
            params += self.attn_head.parameters()
        if self.concat_w is not None:
            params += [self.concat_w, self.concat_b]
        if self.references is not None:
            params.append(self.references)
        return params

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())

    # -- transport plumbing -------------------------------------------------

    def freeze_ot_plans(self, frozen: bool = True):
        """Cache transport plans across forwards (finite-difference seam)."""
        self._plan_cache = [] if frozen else None
        self._plan_cursor = 0

    def _transport_weights(self, src_v: np.ndarray, tgt_v: np.ndarray) -> np.ndarray:
        if self._plan_cache is not None and self._plan_cursor < len(self._plan_cache):
            w = self._plan_cache[self._plan_cursor]
            self._plan_cursor += 1
            return w
        n = src_v.shape[0]
        coupling = transport.emd_exact(
            np.full(n, 1.0 / n),
            np.full(tgt_v.shape[0], 1.0 / tgt_v.shape[0]),
            transport.cost_matrix(src_v, tgt_v),
        )
        w = coupling.plan * n
        if self._plan_cache is not None:
            self._plan_cache.append(w)
            self._plan_cursor += 1
        return w

    def _adapt(self, src: Node, tgt: Node) -> Node:
        return dc.matmul(dc.constant(self._transport_weights(src.value, tgt.value)), tgt)

    # -- reference init -------------------------------------------------------

    def init_references(self, encoded_rows: np.ndarray, rng: np.random.Generator):
        """Data-driven init: sample reference rows from encoded image features."""
        if self.references is None:
            return
        pool = np.asarray(encoded_rows, dtype=float)
        idx = rng.choice(pool.shape[0], size=self.cfg.seq_len, replace=pool.shape[0] < self.cfg.seq_len)
        self.references.value[...] = pool[idx]
        self._refs_initialized = True

    def encode_image(self, y_raw: np.ndarray) -> np.ndarray:
        return np.asarray(y_raw, dtype=float) @ self.e_img

    def _image_sequence(self, y_enc: np.ndarray) -> Node:
        """Length-equalized image representation per the configured mode."""
        cfg = self.cfg
        if cfg.otk_mode == OTK:
            emb = transport.otk_embed(
                y_enc, self.references,
                transport.OTKConfig(cfg.seq_len, cfg.otk_eps, cfg.otk_iters),
            )
            self.last_otk_violation = emb.marginal_violation
            return emb.values
        if cfg.otk_mode == REPEAT:
            return dc.tile_rows(dc.mean_rows(dc.constant(y_enc)), cfg.seq_len)
        if y_enc.shape[0] != cfg.seq_len:
            raise ParameterError(
                f"identity otk_mode needs image length {cfg.seq_len}, got {y_enc.shape[0]}"
            )
        return dc.constant(y_enc)

    # -- forward -------------------------------------------------------------

    def forward(self, x_raw: np.ndarray, y_raw: np.ndarray, training: bool,
                rng: np.random.Generator | None = None) -> Node:
        cfg = self.cfg
        x_raw = np.asarray(x_raw, dtype=float)
        y_raw = np.asarray(y_raw, dtype=float)
        if x_raw.shape != (cfg.seq_len, cfg.d):
            raise DimensionError(f"text input must be {cfg.seq_len}x{cfg.d}, got {x_raw.shape}")
        if y_raw.shape[1] != cfg.d:
            raise DimensionError(f"image input width must be {cfg.d}, got {y_raw.shape[1]}")
        self._plan_cursor = 0

        x = dc.constant(x_raw @ self.e_text)
        y_enc = self.encode_image(y_raw)
        s = self._image_sequence(y_enc)

        f = ctx.stack_forward(x, self.stack, cfg.context_gate_override)
        mask = np.ones((cfg.seq_len, 2)) if cfg.image_mask_ones else None
        h = gated.gated_attention(s, self.gated_layer, mask_override=mask)

        if cfg.ot_enabled:
            x_t = self._adapt(s, x)
            s_t = self._adapt(x, s)
        else:
            x_t, s_t = x, s

        fused = build_fused_inputs(f, x_t, h, s_t)
        if cfg.fusion == CO_ATTENTION:
            return co_attention_forward(fused, self.co_head, training, rng)
        if cfg.fusion == ATTN_FUSION:
            return attn_fusion_forward(fused, self.attn_head, training, rng)
        pooled = dc.concat_cols(dc.mean_rows(fused.c), dc.mean_rows(fused.s))
        return dc.add(dc.matmul(pooled, self.concat_w), self.concat_b)

    def predict_proba(self, x_raw: np.ndarray, y_raw: np.ndarray) -> np.ndarray:
        logits = self.forward(x_raw, y_raw, training=False).value
        shifted = logits - logits.max()
        e = np.exp(shifted)
        return (e / e.sum()).ravel()

    def loss(self, logits: Node, label: int) -> Node:
        probs = dc.softmax_rows(logits)
        targets = calib.smooth_targets(label, self.smoothing)
        return calib.ls_cross_entropy(probs, targets)


def assemble_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """Build a trainable model for the given configuration."""
    return Model(cfg, seed)


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count from the declared shapes."""
    d, d_q, d_k = cfg.d, cfg.d_q, cfg.d_k
    strat = cfg.context_strategy()
    per_layer = d * d_q + d * d_k + d * d_q + d * d_k + 2 * d_q + 2 * d_k
    total = strat.layers * per_layer
    if strat.variant in (ctx.DEEP, ctx.DEEP_GLOBAL):
        total += sum((j + 1) * d * d for j in range(strat.layers))
    total += d * cfg.d_g * 2 + cfg.d_g * 2
    d_prime = 2 * d
    if cfg.fusion == CO_ATTENTION:
        total += d_prime * d_prime + 2 * cfg.k * d_prime + 2 * cfg.k
        total += 2 * d_prime * 128 + 128 + 128 * 2 + 2
    elif cfg.fusion == ATTN_FUSION:
        total += 2 * (d_prime * 128 + 128 + 128 + 1)
        total += 2 * d_prime * cfg.d_z + 2 * cfg.d_z
        total += cfg.d_z * 2 + 2
    else:
        total += 2 * d_prime * 2 + 2
    if cfg.otk_mode == OTK:
        total += cfg.seq_len * d
    return total


def ablation_variant(base: ModelConfig, axis: str) -> list[tuple[str, ModelConfig]]:
    """Named config variants for one ablation axis."""
    if axis == "no_context":
        return [("no_context", replace(base, context_gate_override=0.0))]
    if axis == "no_gate":
        return [("no_gate", replace(base, image_mask_ones=True))]
    if axis == "no_ot":
        return [("no_ot", replace(base, ot_enabled=False, otk_mode=IDENTITY))]
    if axis == "repeat_instead_of_otk":
        return [("repeat_instead_of_otk", replace(base, otk_mode=REPEAT))]
    if axis == "no_fusion":
        return [("no_fusion", replace(base, fusion=CONCAT))]
    if axis == "layer_sweep":
        return [(f"layers_{l}", replace(base, strategy=ctx.DEEP, layers=l))
                for l in range(1, 6)]
    raise ParameterError(f"unknown ablation axis {axis!r}")
