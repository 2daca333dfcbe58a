"""Parametric scene images and their captions.

A scene is a solid background with one centered colored shape; its caption
is "a {fg} {shape} on a {bg} background". Rendering is pure numpy, so the
same scene always produces the same pixels, and a caption can be parsed
back into the scene it describes. The offline encoder backend leans on
this: captions are scored by re-rendering the described scene.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ValidationError

COLORS = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 80, 220),
    "yellow": (230, 210, 50),
    "purple": (150, 60, 200),
    "orange": (240, 140, 40),
    "teal": (40, 190, 190),
    "gray": (128, 128, 128),
    "white": (245, 245, 245),
    "black": (20, 20, 20),
}

SHAPES = ("circle", "square", "triangle")

IMAGE_SIZE = 32


@dataclass(frozen=True)
class Scene:
    bg: str
    fg: str
    shape: str

    def __post_init__(self):
        if self.bg not in COLORS or self.fg not in COLORS:
            raise ValidationError(f"unknown color in scene {self!r}")
        if self.shape not in SHAPES:
            raise ValidationError(f"unknown shape {self.shape!r}")
        if self.bg == self.fg:
            raise ValidationError("foreground and background colors must differ")

    def caption(self) -> str:
        return f"a {self.fg} {self.shape} on a {self.bg} background"


def render(scene: Scene, size: int = IMAGE_SIZE) -> np.ndarray:
    """Rasterize a scene to a (size, size, 3) uint8 array."""
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:, :] = COLORS[scene.bg]
    yy, xx = np.mgrid[0:size, 0:size]
    cy = cx = (size - 1) / 2.0
    r = size * 0.3
    if scene.shape == "circle":
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif scene.shape == "square":
        mask = (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    else:  # triangle pointing up
        mask = (yy >= cy - r) & (yy <= cy + r) & \
               (np.abs(xx - cx) <= (yy - (cy - r)) / 2.0)
    img[mask] = COLORS[scene.fg]
    return img


def parse_caption(text: str) -> Scene | None:
    """Invert caption() for any text using the scene vocabulary; None when
    the text does not name two colors and a shape."""
    words = [w.strip(".,!?").lower() for w in text.split()]
    colors = [w for w in words if w in COLORS]
    shapes = [w for w in words if w in SHAPES]
    if len(colors) < 2 or not shapes or colors[0] == colors[1]:
        return None
    return Scene(bg=colors[1], fg=colors[0], shape=shapes[0])


def descriptor(img: np.ndarray) -> np.ndarray:
    """15-dim scene summary: overall mean RGB plus 2x2 quadrant mean RGBs,
    scaled to [0, 1]."""
    arr = np.asarray(img, dtype=np.float64) / 255.0
    h, w = arr.shape[:2]
    parts = [arr.mean(axis=(0, 1))]
    for ys in (slice(0, h // 2), slice(h // 2, h)):
        for xs in (slice(0, w // 2), slice(w // 2, w)):
            parts.append(arr[ys, xs].mean(axis=(0, 1)))
    return np.concatenate(parts)


def sample_scenes(count: int, seed: int) -> list[Scene]:
    """Distinct scenes drawn without replacement from the combo space."""
    combos = [Scene(bg, fg, shape)
              for bg in COLORS for fg in COLORS if fg != bg
              for shape in SHAPES]
    if count > len(combos):
        raise ValidationError(
            f"only {len(combos)} distinct scenes available, asked for {count}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(combos), size=count, replace=False)
    return [combos[i] for i in idx]


def build_sanity_set(out_dir: str | os.PathLike, n_pairs: int = 50,
                     seed: int = 0) -> dict[str, str]:
    """Write n_pairs scene images plus a matching-caption dataset.

    Returns the dataset and image-root paths. Each sample's candidate is the
    true caption; references are caption paraphrases of the same scene.
    """
    out_dir = os.fspath(out_dir)
    image_root = os.path.join(out_dir, "images")
    os.makedirs(image_root, exist_ok=True)
    scenes = sample_scenes(n_pairs, seed)
    lines = []
    for i, scene in enumerate(scenes):
        name = f"scene{i:03d}.png"
        Image.fromarray(render(scene)).save(os.path.join(image_root, name))
        lines.append(json.dumps({
            "id": f"pair{i:03d}",
            "image_ref": name,
            "candidate": scene.caption(),
            "references": [
                f"a {scene.fg} {scene.shape} drawn on a {scene.bg} background",
                f"the image shows a {scene.fg} {scene.shape}",
            ],
        }))
    dataset_path = os.path.join(out_dir, "dataset.jsonl")
    with open(dataset_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return {"dataset": dataset_path, "image_root": image_root}
