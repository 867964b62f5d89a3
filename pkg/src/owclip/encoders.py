"""Dual-encoder backends.

Two image-side implementations sit behind the same interface:

* ``PrecomputedEmbeddingBackend`` serves vectors from an embedding store.
  Crops are simulated in embedding space: the vector is pulled toward a
  deterministic per-crop noise direction in proportion to the discarded
  area, then renormalized. This is the documented completeness model for
  data that exists only as embeddings.
* ``ToyPixelBackend`` actually loads the image, crops in pixel space and
  runs the toy transformer.

The text side is a hash backend: ``seed = (sha256(utf8(phrase))[0:8] as
little-endian u64 + backend_seed) mod 2**64``, then a seeded standard
normal vector, L2-normalized. The rule is deliberately simple enough to
recompute by hand.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Protocol

import numpy as np

from .errors import InputError
from .smoothing import CropSpec
from .store import read_embedding_store
from .toy_vit import EncoderConfig, TokenSequence, ToyImageEncoder
from .vectors import l2_normalize


class TextEncoder(Protocol):
    dim: int

    def encode_text(self, phrase: str) -> np.ndarray: ...


class ImageBackend(Protocol):
    dim: int

    def embed_proposal(self, proposal) -> np.ndarray: ...

    def embed_crop(self, proposal, crop: CropSpec) -> np.ndarray: ...


def _hash_seed(*parts: bytes) -> int:
    digest = hashlib.sha256(b"\x1f".join(parts)).digest()
    return int.from_bytes(digest[:8], "little")


class HashTextEncoder:
    """Deterministic stand-in for a pretrained text encoder."""

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def encode_text(self, phrase: str) -> np.ndarray:
        if not phrase:
            raise InputError("cannot encode an empty phrase")
        digest = hashlib.sha256(phrase.encode("utf-8")).digest()
        rng_seed = (int.from_bytes(digest[:8], "little") + self.seed) % 2**64
        rng = np.random.default_rng(rng_seed)
        return l2_normalize(rng.standard_normal(self.dim))


class PrecomputedEmbeddingBackend:
    """Image backend serving unit vectors keyed by proposal id."""

    def __init__(self, vectors: dict[str, np.ndarray], seed: int = 0):
        self._vectors = {pid: l2_normalize(vec) for pid, vec in vectors.items()}
        if not self._vectors:
            raise InputError("backend needs at least one vector")
        dims = {v.shape[0] for v in self._vectors.values()}
        if len(dims) != 1:
            raise InputError(f"inconsistent vector dimensions: {sorted(dims)}")
        self.dim = dims.pop()
        self.seed = seed

    @classmethod
    def from_store(cls, path, seed: int = 0) -> "PrecomputedEmbeddingBackend":
        ids, vectors = read_embedding_store(path)
        return cls({pid: vectors[i] for i, pid in enumerate(ids)}, seed=seed)

    def __contains__(self, proposal_id: str) -> bool:
        return proposal_id in self._vectors

    def embed_proposal(self, proposal) -> np.ndarray:
        pid = proposal if isinstance(proposal, str) else proposal.proposal_id
        if pid not in self._vectors:
            raise InputError(f"no stored embedding for proposal '{pid}'")
        return self._vectors[pid].copy()

    def crop_noise(self, proposal_id: str, crop: CropSpec) -> np.ndarray:
        """Deterministic unit noise direction for one (proposal, crop) pair."""
        seed = _hash_seed(
            str(self.seed).encode(), proposal_id.encode(),
            struct.pack("<3d", crop.epsilon, crop.anchor[0], crop.anchor[1]))
        rng = np.random.default_rng(seed)
        return l2_normalize(rng.standard_normal(self.dim))

    def embed_crop(self, proposal, crop: CropSpec) -> np.ndarray:
        pid = proposal if isinstance(proposal, str) else proposal.proposal_id
        base = self.embed_proposal(pid)
        noise = self.crop_noise(pid, crop)
        return l2_normalize(crop.epsilon * base + (1.0 - crop.epsilon) * noise)


def tokenize_image(image, config: EncoderConfig, cls_token: np.ndarray) -> TokenSequence:
    """Grayscale-resize an image into a grid of flattened patch tokens.

    The image is resized to (grid * patch) pixels per side where
    patch**2 == d_model, split into n_patches square blocks, and each
    block's pixels (shifted to [-0.5, 0.5]) become one token.
    """
    patch = int(round(config.d_model ** 0.5))
    if patch * patch != config.d_model:
        raise InputError(f"d_model {config.d_model} is not a square patch size")
    grid = int(round(config.n_patches ** 0.5))
    if grid * grid != config.n_patches:
        raise InputError(f"n_patches {config.n_patches} is not a square grid")
    side = grid * patch
    gray = image.convert("L").resize((side, side))
    arr = np.asarray(gray, dtype=np.float64) / 255.0 - 0.5
    patches = []
    for gy in range(grid):
        for gx in range(grid):
            block = arr[gy * patch:(gy + 1) * patch, gx * patch:(gx + 1) * patch]
            patches.append(block.reshape(-1))
    return TokenSequence(cls=cls_token, patches=np.stack(patches))


class ToyPixelBackend:
    """Image backend that crops real pixels and runs the toy transformer."""

    def __init__(self, encoder: ToyImageEncoder | None = None):
        self.encoder = encoder or ToyImageEncoder()
        self.dim = self.encoder.dim

    def _load_region(self, proposal, box):
        from PIL import Image

        with Image.open(proposal.image_path) as img:
            return img.crop(tuple(int(round(v)) for v in box)).copy()

    def tokens_for(self, proposal, crop: CropSpec | None = None) -> TokenSequence:
        x1, y1, x2, y2 = proposal.box
        if crop is not None:
            w, h = x2 - x1, y2 - y1
            side = crop.side
            left = x1 + crop.anchor[0] * w
            top = y1 + crop.anchor[1] * h
            box = (left, top, left + side * w, top + side * h)
        else:
            box = (x1, y1, x2, y2)
        region = self._load_region(proposal, box)
        return tokenize_image(region, self.encoder.config, self.encoder.cls_token)

    def embed_proposal(self, proposal) -> np.ndarray:
        return self.encoder.encode(self.tokens_for(proposal))

    def embed_crop(self, proposal, crop: CropSpec) -> np.ndarray:
        return self.encoder.encode(self.tokens_for(proposal, crop))
