"""Per-episode incremental tuning of context vectors and prompt tokens.

The class feature source holds one learnable context vector per class.
Classification is cosine similarity against those vectors, sharpened by a
temperature before softmax. Each training episode owns a disjoint block of
parameters (its new context vectors plus one prompt block); everything from
earlier episodes is frozen, which a byte fingerprint makes checkable.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import (ConfigError, DimensionError, FormatError, InputError,
                     NumericsError, StateError)
from .smoothing import TrainSample
from .toy_vit import PromptBlock, ToyImageEncoder
from .vectors import l2_normalize

TEMPERATURE_DEFAULT = 0.07


@dataclass
class ClassEntry:
    label: str
    context_vector: np.ndarray
    phrases: list[str]
    episode_id: int

    def __post_init__(self):
        self.context_vector = np.asarray(self.context_vector, dtype=np.float64)


class ClassFeatureSource:
    """Ordered store of per-class context vectors."""

    def __init__(self, dim: int):
        self.dim = dim
        self.entries: list[ClassEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    def index_of(self, label: str) -> int:
        for i, e in enumerate(self.entries):
            if e.label == label:
                return i
        raise InputError(f"unknown class label '{label}'")

    def add(self, entry: ClassEntry) -> int:
        if entry.label in self.labels:
            raise InputError(f"duplicate class label '{entry.label}'")
        if entry.context_vector.shape != (self.dim,):
            raise DimensionError(
                f"context vector dim {entry.context_vector.shape} != ({self.dim},)")
        self.entries.append(entry)
        return len(self.entries) - 1

    def matrix(self) -> np.ndarray:
        return np.stack([e.context_vector for e in self.entries])

    def params_bytes(self, before_episode: int | None = None) -> bytes:
        """Canonical bytes of entries, optionally restricted to earlier episodes."""
        chunks = []
        for e in self.entries:
            if before_episode is not None and e.episode_id >= before_episode:
                continue
            chunks.append(e.label.encode("utf-8"))
            chunks.append(np.ascontiguousarray(e.context_vector, dtype="<f8").tobytes())
        return b"".join(chunks)


def init_class_entry(label: str, selected_phrases: list[str], text_encoder,
                     episode_id: int) -> ClassEntry:
    """Average the phrase embeddings and renormalize to seed a context vector."""
    if not selected_phrases:
        raise InputError(f"class '{label}' has no phrases to initialize from")
    embs = np.stack([text_encoder.encode_text(p) for p in selected_phrases])
    return ClassEntry(label=label, context_vector=l2_normalize(embs.mean(axis=0)),
                      phrases=list(selected_phrases), episode_id=episode_id)


@dataclass
class LogitsRow:
    scores: np.ndarray
    probs: np.ndarray


def _softmax(scores: np.ndarray, temperature: float) -> np.ndarray:
    z = scores / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify(embedding, source: ClassFeatureSource, temperature: float = TEMPERATURE_DEFAULT) -> LogitsRow:
    """Cosine scores against every context vector, softmaxed at the given temperature."""
    if len(source) == 0:
        raise StateError("class feature source is empty")
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    e = l2_normalize(embedding)
    c = source.matrix()
    cn = c / np.linalg.norm(c, axis=1, keepdims=True)
    scores = np.clip(cn @ e, -1.0, 1.0)
    return LogitsRow(scores=scores, probs=_softmax(scores, temperature))


@dataclass(frozen=True)
class ClassDecision:
    known: bool
    label: str | None = None
    class_index: int | None = None
    prob: float | None = None


def route_proposal(embedding, source: ClassFeatureSource, t_threshold: float,
                   temperature: float = TEMPERATURE_DEFAULT) -> ClassDecision:
    """Route to the argmax class when its probability clears the threshold.

    Ties go to the lowest class index. An empty source routes everything to
    unknown (there is nothing to match against).
    """
    if not (0.0 < t_threshold < 1.0):
        raise ConfigError(f"t_threshold must be in (0, 1), got {t_threshold}")
    if len(source) == 0:
        return ClassDecision(known=False)
    row = classify(embedding, source, temperature)
    idx = int(np.argmax(row.probs))
    prob = float(row.probs[idx])
    if prob >= t_threshold:
        return ClassDecision(known=True, label=source.entries[idx].label,
                             class_index=idx, prob=prob)
    return ClassDecision(known=False, prob=prob)


@dataclass
class Hyperparams:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 0.02
    temperature: float = TEMPERATURE_DEFAULT
    seed: int = 0
    holdout_fraction: float = 0.1

    def validate(self) -> "Hyperparams":
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or self.temperature <= 0:
            raise ConfigError("learning_rate and temperature must be positive")
        if not (0.0 <= self.holdout_fraction < 1.0):
            raise ConfigError("holdout_fraction must be in [0, 1)")
        return self


@dataclass
class Episode:
    episode_id: int
    class_indices: list[int]
    hyperparams: Hyperparams
    prompt_block: PromptBlock | None = None
    frozen_fingerprint: str = ""
    finalized: bool = False


def parameter_fingerprint(source: ClassFeatureSource, before_episode: int,
                          frozen_blocks=(), encoder: ToyImageEncoder | None = None) -> str:
    """sha256 over every parameter that must stay untouched while the given
    episode trains: earlier context vectors, earlier prompt blocks, and the
    base encoder weights."""
    h = hashlib.sha256()
    h.update(source.params_bytes(before_episode=before_episode))
    for block in frozen_blocks:
        if block.episode_id < before_episode:
            h.update(struct.pack("<q", block.episode_id))
            h.update(np.ascontiguousarray(block.tokens_per_layer, dtype="<f8").tobytes())
    if encoder is not None:
        h.update(encoder.weight_bytes())
    return h.hexdigest()


def episode_objective(samples: list[TrainSample], context: np.ndarray,
                      active_indices: list[int], temperature: float, *,
                      encoder: ToyImageEncoder | None = None, blocks=(),
                      active_block: int | None = None, p_min: float = 1e-12):
    """Mean smoothed loss over a batch plus gradients for the learnable set.

    Returns (loss, grad_active_context, grad_prompt, probs) where
    grad_active_context has one row per entry of ``active_indices`` and
    grad_prompt is None unless an active prompt block was given. Gradients
    are exact for the exposed loss (finite differences agree to O(h^2)).
    """
    k, dim = context.shape
    norms = np.linalg.norm(context, axis=1)
    if np.any(norms == 0.0):
        raise InputError("zero context vector")
    chat = context / norms[:, None]

    embs = np.zeros((len(samples), dim))
    caches = []
    for i, s in enumerate(samples):
        if s.tokens is not None and encoder is not None:
            emb, cache = encoder.forward(s.tokens, blocks, keep_cache=True)
            embs[i] = emb
            caches.append(cache)
        else:
            embs[i] = s.embedding
            caches.append(None)

    with np.errstate(invalid="ignore", over="ignore"):  # non-finite inputs surface as NumericsError
        scores = embs @ chat.T                  # rows are unit vectors
        probs = _softmax(scores, temperature)
    targets = np.stack([s.target.dense() for s in samples])
    if targets.shape[1] != k:
        raise DimensionError(f"targets built for Q={targets.shape[1]}, source has {k}")
    loss = float(-(targets * np.log(np.clip(probs, p_min, None))).sum(axis=1).mean())

    dscores = (probs - targets) / (temperature * len(samples))
    # d cos / d c) = (e - (e . chat) chat) / |c|; embeddings enter as-is.
    grad_ctx = np.zeros((len(active_indices), dim))
    for row, ki in enumerate(active_indices):
        w = dscores[:, ki]
        grad_ctx[row] = (w @ embs - (w @ scores[:, ki]) * chat[ki]) / norms[ki]

    grad_prompt = None
    if active_block is not None and encoder is not None:
        block = blocks[active_block]
        grad_prompt = np.zeros_like(block.tokens_per_layer)
        for i, cache in enumerate(caches):
            if cache is None:
                continue
            d_emb = dscores[i] @ chat
            grads = encoder.backward(cache, d_emb)
            grad_prompt += grads["prompts"][active_block]
    return loss, grad_ctx, grad_prompt, probs


@dataclass
class TrainReport:
    episode_id: int
    epochs: int
    batch_size: int
    learning_rate: float
    temperature: float
    seed: int
    n_train: int
    n_holdout: int
    epoch_losses: list[float] = field(default_factory=list)
    final_train_accuracy: float | None = None
    holdout_accuracy: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def _accuracy(samples, context, temperature, encoder, blocks) -> float | None:
    if not samples:
        return None
    loss, _, _, probs = episode_objective(
        samples, context, [], temperature, encoder=encoder, blocks=blocks)
    pred = probs.argmax(axis=1)
    truth = np.array([s.class_index for s in samples])
    return float((pred == truth).mean())


def train_episode(samples: list[TrainSample], episode: Episode,
                  source: ClassFeatureSource, *, encoder: ToyImageEncoder | None = None,
                  frozen_blocks=()) -> TrainReport:
    """SGD over the active episode's parameters only.

    Negatives span every class currently in the source, so the target
    dimension Q must equal len(source). Earlier context vectors and prompt
    blocks participate in the forward pass but never receive updates.
    """
    hp = episode.hyperparams.validate()
    if not samples:
        raise InputError("no training samples")
    active = list(episode.class_indices)
    for s in samples:
        if s.class_index not in active:
            raise InputError(
                f"sample for class {s.class_index} is not part of episode {episode.episode_id}")
        if s.target.q != len(source):
            raise DimensionError(
                f"sample target Q={s.target.q} but source has {len(source)} classes")

    blocks = list(frozen_blocks)
    active_block = None
    if episode.prompt_block is not None and encoder is not None and any(
            s.tokens is not None for s in samples):
        blocks.append(episode.prompt_block)
        active_block = len(blocks) - 1

    rng = np.random.default_rng(hp.seed)
    order = rng.permutation(len(samples))
    n_holdout = int(hp.holdout_fraction * len(samples))
    if len(samples) - n_holdout < 1:
        n_holdout = 0
    holdout = [samples[i] for i in order[:n_holdout]]
    train = [samples[i] for i in order[n_holdout:]]

    report = TrainReport(
        episode_id=episode.episode_id, epochs=hp.epochs, batch_size=hp.batch_size,
        learning_rate=hp.learning_rate, temperature=hp.temperature, seed=hp.seed,
        n_train=len(train), n_holdout=len(holdout))
    if hp.epochs == 0:
        return report

    context = source.matrix()
    prompt = episode.prompt_block
    for epoch in range(hp.epochs):
        perm = rng.permutation(len(train))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(train), hp.batch_size):
            batch = [train[i] for i in perm[start:start + hp.batch_size]]
            loss, grad_ctx, grad_prompt, _ = episode_objective(
                batch, context, active, hp.temperature,
                encoder=encoder, blocks=blocks, active_block=active_block)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad_ctx)) or (
                    grad_prompt is not None and not np.all(np.isfinite(grad_prompt))):
                raise NumericsError("non-finite loss or gradient", epoch=epoch,
                                    batch=n_batches)
            for row, ki in enumerate(active):
                vec = context[ki] - hp.learning_rate * grad_ctx[row]
                context[ki] = vec / np.linalg.norm(vec)
            if grad_prompt is not None:
                prompt.tokens_per_layer -= hp.learning_rate * grad_prompt
            epoch_loss += loss
            n_batches += 1
        report.epoch_losses.append(epoch_loss / n_batches)

    for ki in active:
        source.entries[ki].context_vector = context[ki].copy()
    context = source.matrix()
    report.final_train_accuracy = _accuracy(train, context, hp.temperature, encoder, blocks)
    report.holdout_accuracy = _accuracy(holdout, context, hp.temperature, encoder, blocks)
    return report


def gradient_check(loss_fn, params: np.ndarray, h: float = 1e-5) -> float:
    """Max componentwise relative error between the analytic gradient and
    central finite differences.

    ``loss_fn(params) -> (loss, grad)`` must be a pure function of the flat
    parameter vector.
    """
    if not (1e-6 <= h <= 1e-3):
        raise ConfigError(f"step size h={h} outside [1e-6, 1e-3]")
    params = np.asarray(params, dtype=np.float64)
    _, analytic = loss_fn(params)
    analytic = np.asarray(analytic, dtype=np.float64)
    worst = 0.0
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] += h
        hi, _ = loss_fn(bumped)
        bumped[i] -= 2 * h
        lo, _ = loss_fn(bumped)
        numeric = (hi - lo) / (2 * h)
        denom = max(abs(float(analytic[i])), abs(numeric), 1e-6)
        worst = max(worst, abs(float(analytic[i]) - numeric) / denom)
    return worst


# ---- episode checkpoints ----

CKPT_MAGIC = b"OWEPCKPT"


def save_episode_checkpoint(path, episode: Episode, source: ClassFeatureSource) -> None:
    """header JSON + little-endian f64 payload + frozen fingerprint."""
    entries = [source.entries[i] for i in episode.class_indices]
    arrays = [np.ascontiguousarray(e.context_vector, dtype="<f8") for e in entries]
    shapes = {"context": [len(entries), source.dim]}
    if episode.prompt_block is not None:
        arrays.append(np.ascontiguousarray(episode.prompt_block.tokens_per_layer, dtype="<f8"))
        shapes["prompt"] = list(episode.prompt_block.tokens_per_layer.shape)
    payload = b"".join(a.tobytes() for a in arrays)
    header = {
        "episode_id": episode.episode_id,
        "dim": source.dim,
        "class_indices": list(episode.class_indices),
        "labels": [e.label for e in entries],
        "phrases": [e.phrases for e in entries],
        "hyperparams": asdict(episode.hyperparams),
        "shapes": shapes,
        "finalized": episode.finalized,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    fp_bytes = episode.frozen_fingerprint.encode("ascii")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<Q", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(fp_bytes)))
        fh.write(fp_bytes)


def load_episode_checkpoint(path):
    """Returns (header dict, context matrix, prompt tokens or None, fingerprint)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic in {path}")
    off = 8
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    (plen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    payload = raw[off:off + plen]
    if len(payload) != plen:
        raise FormatError("truncated checkpoint payload")
    off += plen
    (flen,) = struct.unpack_from("<I", raw, off)
    off += 4
    fingerprint = raw[off:off + flen].decode("ascii")

    n, dim = header["shapes"]["context"]
    ctx_bytes = n * dim * 8
    context = np.frombuffer(payload[:ctx_bytes], dtype="<f8").reshape(n, dim).copy()
    prompt = None
    if "prompt" in header["shapes"]:
        shape = tuple(header["shapes"]["prompt"])
        expected = ctx_bytes + int(np.prod(shape)) * 8
        if len(payload) != expected:
            raise FormatError("checkpoint payload length mismatch")
        prompt = np.frombuffer(payload[ctx_bytes:], dtype="<f8").reshape(shape).copy()
    elif len(payload) != ctx_bytes:
        raise FormatError("checkpoint payload length mismatch")
    return header, context, prompt, fingerprint
