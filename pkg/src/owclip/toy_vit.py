"""Deterministic toy transformer image encoder with per-layer prompt slots.

A small pre-LN ViT-style stack, written in float64 numpy with an explicit
backward pass so prompt-token gradients can be checked against finite
differences. Per layer:

    u   = LN1(x)
    att = MHA(u);           x1 = x + att
    v   = LN2(x1)
    mlp = W2 gelu(W1 v);    x2 = x1 + mlp

The token sequence entering layer ``l`` is ``[cls, prompts_l, patches]``.
Prompt tokens are re-injected fresh at every layer: the layer outputs at the
prompt slots are discarded and never feed the next layer, so each layer's
prompt rows are independent leaf parameters. The final embedding is
``normalize(LN_f(cls) @ W_proj)``.

Only input-side gradients are computed (prompt tokens, cls, patches); the
base weights are frozen by design, so no weight gradients exist anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ConfigError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * phi


@dataclass
class TokenSequence:
    """Input to the encoder: a [CLS] slot plus N patch embeddings."""

    cls: np.ndarray
    patches: np.ndarray
    layer_index: int = 0

    def __post_init__(self):
        self.cls = np.asarray(self.cls, dtype=np.float64)
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 2 or self.patches.shape[0] < 1:
            raise ConfigError(f"patches must be (N, d_model) with N >= 1, got {self.patches.shape}")
        if self.cls.shape != (self.patches.shape[1],):
            raise ConfigError("cls and patch dimensions disagree")
        if not (np.all(np.isfinite(self.cls)) and np.all(np.isfinite(self.patches))):
            raise ConfigError("token sequence contains non-finite entries")


@dataclass
class PromptBlock:
    """Per-episode learnable prompt tokens, one group of M per layer.

    Frozen blocks are read-only: training an episode must never touch the
    tokens of an earlier one.
    """

    episode_id: int
    tokens_per_layer: np.ndarray  # (L, M, d_model)

    def __post_init__(self):
        self.tokens_per_layer = np.asarray(self.tokens_per_layer, dtype=np.float64)
        if self.tokens_per_layer.ndim != 3:
            raise ConfigError("tokens_per_layer must have shape (L, M, d_model)")

    @property
    def layers(self) -> int:
        return self.tokens_per_layer.shape[0]

    @property
    def length(self) -> int:
        return self.tokens_per_layer.shape[1]

    @property
    def d_model(self) -> int:
        return self.tokens_per_layer.shape[2]

    def freeze(self) -> "PromptBlock":
        self.tokens_per_layer.flags.writeable = False
        return self

    @property
    def frozen(self) -> bool:
        return not self.tokens_per_layer.flags.writeable


def init_prompt_block(episode_id: int, layers: int, length: int, d_model: int,
                      seed: int, scale: float = 0.02) -> PromptBlock:
    rng = np.random.default_rng(seed)
    tokens = scale * rng.standard_normal((layers, length, d_model))
    return PromptBlock(episode_id=episode_id, tokens_per_layer=tokens)


@dataclass
class EncoderConfig:
    layers: int = 2
    d_model: int = 16
    n_heads: int = 2
    n_patches: int = 4
    d_out: int = 16
    mlp_hidden: int = 32
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError("d_model must be divisible by n_heads")


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def _layer_norm_backward(dy: np.ndarray, gamma: np.ndarray, cache):
    xhat, inv_std = cache
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv_std * (dxhat - m1 - xhat * m2)


class ToyImageEncoder:
    """Seeded two-layer toy ViT; immutable after construction."""

    def __init__(self, config: EncoderConfig | None = None):
        self.config = config or EncoderConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        d, h = cfg.d_model, cfg.mlp_hidden

        def mat(rows, cols):
            return rng.standard_normal((rows, cols)) / np.sqrt(rows)

        self.cls_token = rng.standard_normal(d) / np.sqrt(d)
        self.layers = []
        for _ in range(cfg.layers):
            self.layers.append({
                "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
                "Wq": mat(d, d), "bq": np.zeros(d),
                "Wk": mat(d, d), "bk": np.zeros(d),
                "Wv": mat(d, d), "bv": np.zeros(d),
                "Wo": mat(d, d), "bo": np.zeros(d),
                "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
                "W1": mat(d, h), "b1": np.zeros(h),
                "W2": mat(h, d), "b2": np.zeros(d),
            })
        self.lnf_g = np.ones(d)
        self.lnf_b = np.zeros(d)
        self.W_proj = mat(d, cfg.d_out)
        for layer in self.layers:
            for arr in layer.values():
                arr.flags.writeable = False
        for arr in (self.cls_token, self.lnf_g, self.lnf_b, self.W_proj):
            arr.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.config.d_out

    def weight_bytes(self) -> bytes:
        """Canonical byte serialization of all frozen weights (for fingerprints)."""
        chunks = [self.cls_token.tobytes()]
        for layer in self.layers:
            for key in sorted(layer):
                chunks.append(layer[key].tobytes())
        chunks += [self.lnf_g.tobytes(), self.lnf_b.tobytes(), self.W_proj.tobytes()]
        return b"".join(chunks)

    # ---- forward ----

    def _check_blocks(self, prompt_blocks):
        cfg = self.config
        for block in prompt_blocks:
            if block.layers != cfg.layers:
                raise ConfigError(
                    f"prompt block for episode {block.episode_id} has {block.layers} "
                    f"layers, encoder has {cfg.layers}")
            if block.d_model != cfg.d_model:
                raise ConfigError(
                    f"prompt block d_model {block.d_model} != encoder d_model {cfg.d_model}")

    def layer_forward(self, layer_index: int, tokens: np.ndarray):
        """Run one transformer layer on a full token matrix (T, d_model).

        Returns (output, cache). Exposed so tests can drive layers manually
        and confirm that discarded prompt outputs never reach the next layer.
        """
        cfg = self.config
        w = self.layers[layer_index]
        d, nh = cfg.d_model, cfg.n_heads
        dh = d // nh
        t = tokens.shape[0]

        u, ln1_cache = _layer_norm(tokens, w["ln1_g"], w["ln1_b"], cfg.ln_eps)
        q = (u @ w["Wq"] + w["bq"]).reshape(t, nh, dh).transpose(1, 0, 2)
        k = (u @ w["Wk"] + w["bk"]).reshape(t, nh, dh).transpose(1, 0, 2)
        v = (u @ w["Wv"] + w["bv"]).reshape(t, nh, dh).transpose(1, 0, 2)
        scores = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
        scores -= scores.max(axis=-1, keepdims=True)
        expo = np.exp(scores)
        attn = expo / expo.sum(axis=-1, keepdims=True)
        ctx = (attn @ v).transpose(1, 0, 2).reshape(t, d)
        att_out = ctx @ w["Wo"] + w["bo"]
        x1 = tokens + att_out

        vn, ln2_cache = _layer_norm(x1, w["ln2_g"], w["ln2_b"], cfg.ln_eps)
        pre = vn @ w["W1"] + w["b1"]
        x2 = x1 + gelu(pre) @ w["W2"] + w["b2"]

        cache = {"ln1": ln1_cache, "ln2": ln2_cache, "q": q, "k": k, "v": v,
                 "attn": attn, "pre": pre, "t": t}
        return x2, cache

    def layer_backward(self, layer_index: int, d_out: np.ndarray, cache) -> np.ndarray:
        """Gradient of one layer w.r.t. its input token matrix."""
        cfg = self.config
        w = self.layers[layer_index]
        d, nh = cfg.d_model, cfg.n_heads
        dh = d // nh
        t = cache["t"]

        # MLP branch
        dmlp_h = d_out @ w["W2"].T
        dpre = dmlp_h * gelu_grad(cache["pre"])
        dvn = dpre @ w["W1"].T
        dx1 = d_out + _layer_norm_backward(dvn, w["ln2_g"], cache["ln2"])

        # attention branch
        dctx = (dx1 @ w["Wo"].T).reshape(t, nh, dh).transpose(1, 0, 2)
        attn, q, k, v = cache["attn"], cache["q"], cache["k"], cache["v"]
        dattn = dctx @ v.transpose(0, 2, 1)
        dv = attn.transpose(0, 2, 1) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(dh)
        dq = dscores @ k
        dk = dscores.transpose(0, 2, 1) @ q
        du = (dq.transpose(1, 0, 2).reshape(t, d) @ w["Wq"].T
              + dk.transpose(1, 0, 2).reshape(t, d) @ w["Wk"].T
              + dv.transpose(1, 0, 2).reshape(t, d) @ w["Wv"].T)
        return dx1 + _layer_norm_backward(du, w["ln1_g"], cache["ln1"])

    def forward(self, seq: TokenSequence, prompt_blocks=(), keep_cache: bool = False):
        """Full forward pass; returns (embedding, cache or None)."""
        cfg = self.config
        if seq.patches.shape[1] != cfg.d_model:
            raise ConfigError(
                f"token d_model {seq.patches.shape[1]} != encoder d_model {cfg.d_model}")
        self._check_blocks(prompt_blocks)

        n = seq.patches.shape[0]
        lengths = [b.length for b in prompt_blocks]
        cls_state = seq.cls
        patch_state = seq.patches
        caches = []
        for l in range(cfg.layers):
            rows = [cls_state[None, :]]
            rows += [b.tokens_per_layer[l] for b in prompt_blocks]
            rows.append(patch_state)
            tokens = np.concatenate(rows, axis=0)
            out, cache = self.layer_forward(l, tokens)
            cls_state = out[0]
            patch_state = out[-n:]
            caches.append(cache)

        yn, lnf_cache = _layer_norm(cls_state, self.lnf_g, self.lnf_b, cfg.ln_eps)
        z = yn @ self.W_proj
        norm = float(np.linalg.norm(z))
        if norm == 0.0:
            raise ConfigError("degenerate zero embedding")
        emb = z / norm

        if not keep_cache:
            return emb, None
        cache = {"layers": caches, "lnf": lnf_cache, "z": z, "norm": norm,
                 "emb": emb, "n": n, "lengths": lengths}
        return emb, cache

    def encode(self, seq: TokenSequence, prompt_blocks=()) -> np.ndarray:
        """Embed a token sequence; prompt slots re-injected fresh at each layer."""
        emb, _ = self.forward(seq, prompt_blocks)
        return emb

    def backward(self, cache, d_emb: np.ndarray):
        """Backprop a gradient w.r.t. the final embedding down to all inputs.

        Returns a dict with:
            prompts: list (per block) of (L, M, d_model) gradients
            cls:     gradient w.r.t. the input cls token
            patches: gradient w.r.t. the input patch tokens
        """
        cfg = self.config
        n = cache["n"]
        lengths = cache["lengths"]

        emb, norm, z = cache["emb"], cache["norm"], cache["z"]
        dz = (d_emb - emb * float(np.dot(emb, d_emb))) / norm
        dyn = dz @ self.W_proj.T
        dcls = _layer_norm_backward(dyn, self.lnf_g, cache["lnf"])
        dpatch = np.zeros((n, cfg.d_model))

        prompt_grads = [np.zeros((cfg.layers, m, cfg.d_model)) for m in lengths]
        for l in reversed(range(cfg.layers)):
            t = cache["layers"][l]["t"]
            d_out = np.zeros((t, cfg.d_model))
            d_out[0] = dcls
            d_out[-n:] = dpatch  # prompt output rows stay zero: discarded
            d_in = self.layer_backward(l, d_out, cache["layers"][l])
            dcls = d_in[0]
            dpatch = d_in[-n:]
            offset = 1
            for bi, m in enumerate(lengths):
                prompt_grads[bi][l] = d_in[offset:offset + m]
                offset += m
        return {"prompts": prompt_grads, "cls": dcls, "patches": dpatch}


def encode_image_with_prompts(encoder: ToyImageEncoder, seq: TokenSequence,
                              prompt_blocks=()) -> np.ndarray:
    return encoder.encode(seq, prompt_blocks)
