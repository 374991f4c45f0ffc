"""Dataset layout on disk and PNG conversion.

    root/
      images/          <stem>.png   (gray or RGB; RGB is reduced to Rec. 601 luma)
      masks_precise/   <stem>.png   (optional; >=128 reads as crack)
      masks_weak/      <stem>.png   (optional)
      probmaps/        <stem>.pmap  (optional, externally produced maps)
      splits/test.txt  (optional; one stem per line)
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .macro import export_probmap, import_probmap

IMAGES = "images"
PRECISE = "masks_precise"
WEAK = "masks_weak"
PROBMAPS = "probmaps"
TEST_SPLIT = Path("splits") / "test.txt"


def read_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            # PIL's "L" conversion is the ITU-R 601-2 luma transform
            arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return np.clip(arr, 0.0, 1.0)


def write_gray(path, image) -> None:
    arr = np.rint(np.clip(np.asarray(image, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.uint8)


def write_mask(path, mask) -> None:
    arr = (np.asarray(mask) > 0).astype(np.uint8) * 255
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def write_overlay(path, image, mask, color=(255, 0, 0)) -> None:
    base = np.rint(np.clip(image, 0, 1) * 255).astype(np.uint8)
    rgb = np.stack([base] * 3, axis=-1)
    sel = np.asarray(mask) > 0
    rgb[sel] = (0.5 * rgb[sel] + 0.5 * np.array(color)).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


@dataclass
class DatasetLayout:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def dir(self, name: str) -> Path:
        return self.root / name

    def stems(self) -> list[str]:
        d = self.dir(IMAGES)
        if not d.is_dir():
            raise FileNotFoundError(f"no images/ directory under {self.root}")
        return sorted(p.stem for p in d.glob("*.png"))

    def has(self, name: str) -> bool:
        d = self.dir(name)
        return d.is_dir() and any(d.iterdir())

    def image(self, stem: str) -> np.ndarray:
        return read_gray(self.dir(IMAGES) / f"{stem}.png")

    def mask(self, kind: str, stem: str) -> np.ndarray:
        path = self.dir(kind) / f"{stem}.png"
        if not path.exists():
            raise FileNotFoundError(f"missing {kind} mask for {stem!r}: {path}")
        return read_mask(path)

    def probmap(self, stem: str) -> np.ndarray:
        return import_probmap(self.dir(PROBMAPS) / f"{stem}.pmap")

    def test_stems(self) -> list[str] | None:
        path = self.root / TEST_SPLIT
        if not path.exists():
            return None
        stems = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
        unknown = sorted(set(stems) - set(self.stems()))
        if unknown:
            raise ValueError(f"split file lists unknown stems: {unknown[:5]}")
        return stems

    def write_test_split(self, stems) -> None:
        path = self.root / TEST_SPLIT
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(f"{s}\n" for s in stems))

    def validate(self) -> None:
        stems = set(self.stems())
        for kind in (PRECISE, WEAK):
            d = self.dir(kind)
            if d.is_dir():
                extra = sorted(p.stem for p in d.glob("*.png") if p.stem not in stems)
                if extra:
                    raise ValueError(f"{kind}/ has files without an image: {extra[:5]}")
        self.test_stems()


__all__ = [
    "DatasetLayout", "read_gray", "write_gray", "read_mask", "write_mask", "write_overlay",
    "export_probmap", "import_probmap", "IMAGES", "PRECISE", "WEAK", "PROBMAPS",
]
