"""Dataset manifests: a versioned JSON index over phantom image files.

A manifest lists images with their declared geometry and pixel format;
loaders verify the files against the declaration so shape mistakes fail
at load time, not deep inside an experiment.  Paths are stored relative
to the manifest file, which keeps a generated dataset relocatable.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError
from .phantoms import load_f32, load_pgm16, random_phantom, save_f32, shepp_logan

MANIFEST_SCHEMA_VERSION = 1
PIXEL_FORMATS = ("f32", "pgm16")
SPLITS = ("train", "val")


@dataclass(frozen=True)
class ManifestEntry:
    id: int
    image_path: str
    width: int
    height: int
    pixel_format: str

    def __post_init__(self):
        if self.pixel_format not in PIXEL_FORMATS:
            raise ContractViolationError(
                f"pixel_format must be one of {PIXEL_FORMATS}, got {self.pixel_format!r}")
        if self.width < 8 or self.height < 8:
            raise ContractViolationError(
                f"entry {self.id}: declared size {self.height}x{self.width} below minimum 8x8")


@dataclass
class DatasetManifest:
    entries: list
    split: str = "train"
    seed: int = 0
    base_dir: str = field(default=".", compare=False)  # not serialized

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ContractViolationError(f"split must be one of {SPLITS}, got {self.split!r}")
        self.entries = [e if isinstance(e, ManifestEntry) else ManifestEntry(**e)
                        for e in self.entries]
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ContractViolationError("manifest entry ids must be unique")
        self.seed = int(self.seed)

    def __len__(self):
        return len(self.entries)

    def load_image(self, entry: ManifestEntry) -> np.ndarray:
        """Read one image, verifying it matches the declared geometry."""
        path = os.path.join(self.base_dir, entry.image_path)
        if entry.pixel_format == "f32":
            img = load_f32(path, entry.height, entry.width)
        else:
            img = load_pgm16(path)
        if img.shape != (entry.height, entry.width):
            raise ContractViolationError(
                f"{path}: has shape {img.shape}, manifest declares "
                f"({entry.height}, {entry.width})")
        return img

    def load_images(self) -> list:
        return [self.load_image(e) for e in self.entries]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "split": self.split,
            "seed": self.seed,
            "entries": [
                {
                    "id": e.id,
                    "image_path": e.image_path,
                    "width": e.width,
                    "height": e.height,
                    "pixel_format": e.pixel_format,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict, base_dir: str = ".") -> "DatasetManifest":
        version = doc.get("schema_version")
        if version != MANIFEST_SCHEMA_VERSION:
            raise ContractViolationError(f"unsupported manifest schema_version {version!r}")
        return cls(entries=list(doc["entries"]), split=doc["split"],
                   seed=doc["seed"], base_dir=base_dir)


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(manifest.to_json_dict(), f, indent=2)
        f.write("\n")


def load_manifest(path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    return DatasetManifest.from_json_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def gen_phantoms(n: int, size: int, seed: int, out_dir,
                 split: str = "train") -> DatasetManifest:
    """Write ``n`` phantom images plus ``manifest.json`` into ``out_dir``.

    Image 0 is the canonical Shepp-Logan; the rest are randomized
    piecewise-constant phantoms (sharp-edged regions, the structure the L1
    focus measure keys on).  Every image is drawn from its own seed stream
    ``(seed, index)``, so regenerating with the same arguments is
    byte-identical regardless of n.
    """
    if n < 1:
        raise ContractViolationError(f"need at least one phantom, got n={n}")
    if size < 8:
        raise ContractViolationError(f"phantom size must be >= 8, got {size}")
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i in range(n):
        if i == 0:
            img = shepp_logan(size)
        else:
            img = random_phantom(size, np.random.default_rng([seed, i]))
        name = f"phantom_{i:03d}.f32"
        save_f32(os.path.join(out_dir, name), img)
        entries.append(ManifestEntry(id=i, image_path=name, width=size,
                                     height=size, pixel_format="f32"))
    manifest = DatasetManifest(entries=entries, split=split, seed=seed,
                               base_dir=os.path.abspath(out_dir))
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest
