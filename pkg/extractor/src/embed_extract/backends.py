"""Encoder backends.

Every backend exposes the same surface: image paths and texts in, float32
embedding matrices out, plus the announced output widths. The offline
backend is fully deterministic and needs no downloads; the hugging-face
backend wraps CLIP ViT-B/32 and a RoBERTa sentence encoder when their
weights are available locally.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np
from PIL import Image

from .errors import ValidationError
from .scenes import IMAGE_SIZE, descriptor, parse_caption, render

DEFAULT_CLIP_MODEL = "openai/clip-vit-base-patch32"
DEFAULT_TEXT_MODEL = "princeton-nlp/sup-simcse-roberta-base"

OFFLINE_D_CLIP = 512
OFFLINE_D_RB = 768
_DESC_DIM = 15
_PROJECTION_SEED = 20240601


class EncoderBackend(Protocol):
    d_clip: int
    d_rb: int
    clip_model_id: str
    text_model_id: str

    def encode_images(self, paths: Sequence[str]) -> np.ndarray: ...

    def encode_texts_clip(self, texts: Sequence[str]) -> np.ndarray: ...

    def encode_texts_cls(self, texts: Sequence[str]) -> np.ndarray: ...


def _hash_embed(text: str, dim: int) -> np.ndarray:
    """Signed bag-of-words hashing; deterministic across platforms."""
    vec = np.zeros(dim, dtype=np.float64)
    words = [w.strip(".,!?").lower() for w in text.split()] or [""]
    for word in words:
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        idx = int.from_bytes(digest[:4], "little") % dim
        sign = 1.0 if digest[4] % 2 == 0 else -1.0
        vec[idx] += sign
    return vec / np.sqrt(len(words))


class OfflineBackend:
    """Deterministic no-download backend over the parametric scene space.

    Images are summarized by a 15-dim color/layout descriptor; captions that
    describe a scene are re-rendered and summarized by the same descriptor,
    so matching image-caption pairs land close in the shared projected
    space. Non-scene text falls back to hashed bag-of-words features in the
    same space.
    """

    def __init__(self):
        self.d_clip = OFFLINE_D_CLIP
        self.d_rb = OFFLINE_D_RB
        self.clip_model_id = "offline-scene-v1"
        self.text_model_id = "offline-hash-v1"
        rng = np.random.default_rng(_PROJECTION_SEED)
        self._proj = rng.standard_normal((_DESC_DIM, self.d_clip))
        self._text_fallback_proj = rng.standard_normal(
            (self.d_clip, self.d_clip))

    def _project(self, desc: np.ndarray) -> np.ndarray:
        return (desc @ self._proj).astype(np.float32)

    def encode_images(self, paths: Sequence[str]) -> np.ndarray:
        out = np.empty((len(paths), self.d_clip), dtype=np.float32)
        for i, path in enumerate(paths):
            with Image.open(path) as img:
                arr = np.asarray(
                    img.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE)))
            out[i] = self._project(descriptor(arr))
        return out

    def encode_texts_clip(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.d_clip), dtype=np.float32)
        for i, text in enumerate(texts):
            scene = parse_caption(text)
            if scene is not None:
                out[i] = self._project(descriptor(render(scene)))
            else:
                out[i] = (_hash_embed(text, self.d_clip)
                          @ self._text_fallback_proj).astype(np.float32)
        return out

    def encode_texts_cls(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([_hash_embed(t, self.d_rb)
                         for t in texts]).astype(np.float32)


class HFBackend:
    """CLIP + RoBERTa encoders via transformers, frozen, CLS-pooled text."""

    def __init__(self, clip_model_id: str = DEFAULT_CLIP_MODEL,
                 text_model_id: str = DEFAULT_TEXT_MODEL,
                 device: str = "cpu", local_files_only: bool = False):
        import torch
        from transformers import (AutoModel, AutoTokenizer, CLIPModel,
                                  CLIPProcessor)
        self._torch = torch
        self.clip_model_id = clip_model_id
        self.text_model_id = text_model_id
        self._device = device
        kw = {"local_files_only": local_files_only}
        self._clip = CLIPModel.from_pretrained(clip_model_id, **kw) \
            .to(device).eval()
        self._clip_proc = CLIPProcessor.from_pretrained(clip_model_id, **kw)
        self._text = AutoModel.from_pretrained(text_model_id, **kw) \
            .to(device).eval()
        self._text_tok = AutoTokenizer.from_pretrained(text_model_id, **kw)
        self.d_clip = int(self._clip.config.projection_dim)
        self.d_rb = int(self._text.config.hidden_size)

    def encode_images(self, paths: Sequence[str]) -> np.ndarray:
        images = [Image.open(p).convert("RGB") for p in paths]
        inputs = self._clip_proc(images=images, return_tensors="pt") \
            .to(self._device)
        with self._torch.no_grad():
            feats = self._clip.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def encode_texts_clip(self, texts: Sequence[str]) -> np.ndarray:
        inputs = self._clip_proc(text=list(texts), return_tensors="pt",
                                 padding=True, truncation=True) \
            .to(self._device)
        with self._torch.no_grad():
            feats = self._clip.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def encode_texts_cls(self, texts: Sequence[str]) -> np.ndarray:
        inputs = self._text_tok(list(texts), return_tensors="pt",
                                padding=True, truncation=True) \
            .to(self._device)
        with self._torch.no_grad():
            hidden = self._text(**inputs).last_hidden_state
        return hidden[:, 0, :].cpu().numpy().astype(np.float32)


def get_backend(name: str = "auto", clip_model_id: str = DEFAULT_CLIP_MODEL,
                text_model_id: str = DEFAULT_TEXT_MODEL,
                device: str = "cpu") -> EncoderBackend:
    """Resolve a backend by name.

    "offline" and "hf" are explicit; "auto" tries locally cached
    hugging-face weights first (never hitting the network) and falls back
    to the offline backend.
    """
    if name == "offline":
        return OfflineBackend()
    if name == "hf":
        return HFBackend(clip_model_id, text_model_id, device)
    if name == "auto":
        try:
            return HFBackend(clip_model_id, text_model_id, device,
                             local_files_only=True)
        except Exception:
            return OfflineBackend()
    raise ValidationError(f"unknown backend {name!r}")
