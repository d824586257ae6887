#!/usr/bin/env python3
"""Run a pretrained image encoder over a folder and write feature + head files.

Standalone companion to the scoring library: it shares no code with it, only
the container format, so the two sides can evolve independently.  Output is
the canonical one-JSON-line-then-raw-bytes layout:

    features   {"dim","dtype","n","num_classes"}  X (n x dim), labels int32 (n)
    head       {"C","d","dtype"}                  W (d x C), then b (C)

Features are the encoder's penultimate activations, captured with a forward
hook on the classification layer so they are exactly what the head consumed;
the head file holds that layer's W and b.  Folding the bias into the features
is deliberately left to the consumer.

Image folders follow the usual layout: class subdirectories (sorted names
define label order), or a flat folder scored as a single class.  Unreadable
images are skipped with a note on stderr.

Without downloaded weights, --no-pretrained builds the same architectures
with seeded random parameters: shapes, determinism, and file contracts all
hold, only the features are meaningless.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ExporterError(Exception):
    pass


IMAGENET_STATS = ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225))
HALF_STATS = ((0.5, 0.5, 0.5), (0.5, 0.5, 0.5))

# name -> (family, checkpoint, resize, crop, (mean, std))
SUPPORTED = {
    "resnet50": ("torchvision", None, 256, 224, IMAGENET_STATS),
    "deit": ("hf", "facebook/deit-base-patch16-224", 256, 224, IMAGENET_STATS),
    "beit": ("hf", "microsoft/beit-base-patch16-224", 224, None, HALF_STATS),
    "mae": ("hf", "facebook/vit-mae-base", 224, None, HALF_STATS),
}

_HF_CLASSES = {
    "deit": ("DeiTForImageClassification", "DeiTConfig"),
    "beit": ("BeitForImageClassification", "BeitConfig"),
    "mae": ("ViTForImageClassification", "ViTConfig"),
}

IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass
class ExportManifest:
    encoder: str
    images: Path
    out_features: Path
    out_head: Path
    batch_size: int = 16
    device: str = "cpu"
    pretrained: bool = True

    def __post_init__(self):
        self.images = Path(self.images)
        self.out_features = Path(self.out_features)
        self.out_head = Path(self.out_head)
        if self.encoder not in SUPPORTED:
            raise ExporterError(
                f"unsupported encoder {self.encoder!r}; choose from "
                f"{sorted(SUPPORTED)}"
            )
        if self.batch_size < 1:
            raise ExporterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.images.is_dir():
            raise ExporterError(f"image folder {self.images} does not exist")
        for out in (self.out_features, self.out_head):
            if not out.parent.is_dir():
                raise ExporterError(f"output directory {out.parent} does not exist")


# -- container writing (format mirror, no library import) ---------------------

_DTYPE_TAGS = {np.dtype("<f4"): "f32", np.dtype("<f8"): "f64"}


def _encode(header: dict, chunks: list[bytes]) -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return head + b"\n" + b"".join(chunks)


def write_feature_file(path, x: np.ndarray, labels: np.ndarray, num_classes: int):
    x = np.ascontiguousarray(x)
    labels = np.ascontiguousarray(labels, dtype="<i4")
    header = {
        "dim": int(x.shape[1]),
        "dtype": _DTYPE_TAGS[x.dtype],
        "n": int(x.shape[0]),
        "num_classes": int(num_classes),
    }
    Path(path).write_bytes(_encode(header, [x.tobytes(), labels.tobytes()]))


def write_head_file(path, w: np.ndarray, b: np.ndarray):
    w = np.ascontiguousarray(w)
    b = np.ascontiguousarray(b)
    header = {"C": int(w.shape[1]), "d": int(w.shape[0]), "dtype": _DTYPE_TAGS[w.dtype]}
    Path(path).write_bytes(_encode(header, [w.tobytes(), b.tobytes()]))


# -- encoders -----------------------------------------------------------------


def _fetch_help(name: str, exc: Exception) -> str:
    lines = [
        f"pretrained weights for {name!r} are not available locally: {exc}",
        "On a networked machine, run this command once to populate the cache,",
        "then copy the cache directory here:",
    ]
    family, checkpoint = SUPPORTED[name][0], SUPPORTED[name][1]
    if family == "torchvision":
        lines.append(
            "  python -c \"from torchvision.models import resnet50, ResNet50_Weights; "
            "resnet50(weights=ResNet50_Weights.DEFAULT)\"   # cache: ~/.cache/torch"
        )
    else:
        lines.append(
            f"  python -c \"from transformers import AutoModel; "
            f"AutoModel.from_pretrained('{checkpoint}')\"   # cache: ~/.cache/huggingface"
        )
    if name == "mae":
        lines.append(
            "Note: the masked-autoencoder checkpoint ships without a classifier;"
            " point the cache at a classification fine-tune of it."
        )
    lines.append("Or pass --no-pretrained for seeded random weights (plumbing only).")
    return "\n".join(lines)


def _load_encoder(manifest: ExportManifest):
    """Return (model, head_module, transform) on the requested device."""
    import torch
    from torchvision import transforms

    name = manifest.encoder
    family, checkpoint, resize, crop, (mean, std) = SUPPORTED[name]
    if family == "torchvision":
        from torchvision.models import ResNet50_Weights, resnet50

        if manifest.pretrained:
            try:
                model = resnet50(weights=ResNet50_Weights.DEFAULT)
            except Exception as exc:
                raise ExporterError(_fetch_help(name, exc)) from exc
        else:
            torch.manual_seed(0)
            model = resnet50(weights=None)
        head = model.fc
    else:
        import transformers

        cls_name, cfg_name = _HF_CLASSES[name]
        model_cls = getattr(transformers, cls_name)
        if manifest.pretrained:
            try:
                model = model_cls.from_pretrained(checkpoint)
            except Exception as exc:
                raise ExporterError(_fetch_help(name, exc)) from exc
        else:
            torch.manual_seed(0)
            config = getattr(transformers, cfg_name)(num_labels=1000)
            model = model_cls(config)
        head = model.classifier

    steps = [transforms.Resize(resize) if crop else transforms.Resize((resize, resize))]
    if crop:
        steps.append(transforms.CenterCrop(crop))
    steps += [transforms.ToTensor(), transforms.Normalize(mean, std)]
    model.eval()
    model.to(manifest.device)
    return model, head, transforms.Compose(steps)


# -- image collection ---------------------------------------------------------


def _collect_images(root: Path) -> tuple[list[tuple[Path, int]], int]:
    subdirs = sorted(d for d in root.iterdir() if d.is_dir())
    if subdirs:
        pairs = []
        for label, sub in enumerate(subdirs):
            for p in sorted(sub.iterdir()):
                if p.suffix.lower() in IMAGE_EXTS:
                    pairs.append((p, label))
        return pairs, len(subdirs)
    pairs = [
        (p, 0) for p in sorted(root.iterdir()) if p.suffix.lower() in IMAGE_EXTS
    ]
    return pairs, 1


# -- export -------------------------------------------------------------------


def export(manifest: ExportManifest):
    """Write both files; return (features, labels, num_classes, W, b)."""
    import torch
    from PIL import Image

    model, head, transform = _load_encoder(manifest)
    pairs, num_classes = _collect_images(manifest.images)

    captured: list = []
    hook = head.register_forward_hook(
        lambda mod, inp, out: captured.append(inp[0].detach())
    )
    feats, labels = [], []
    batch, batch_labels = [], []

    def flush():
        if not batch:
            return
        stacked = torch.stack(batch).to(manifest.device)
        with torch.no_grad():
            model(stacked)
        feats.append(captured.pop().cpu().numpy())
        labels.extend(batch_labels)
        batch.clear()
        batch_labels.clear()

    for path, label in pairs:
        try:
            img = Image.open(path).convert("RGB")
        except Exception as exc:
            print(f"skipping {path}: {exc}", file=sys.stderr)
            continue
        batch.append(transform(img))
        batch_labels.append(label)
        if len(batch) == manifest.batch_size:
            flush()
    flush()
    hook.remove()

    if not feats:
        raise ExporterError(f"no readable images under {manifest.images}")
    x = np.concatenate(feats, axis=0)
    y = np.asarray(labels, dtype="<i4")
    w = np.ascontiguousarray(head.weight.detach().cpu().numpy().T)
    b = np.ascontiguousarray(head.bias.detach().cpu().numpy())

    write_feature_file(manifest.out_features, x, y, num_classes)
    write_head_file(manifest.out_head, w, b)
    return x, y, num_classes, w, b


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="export encoder features and the classifier head"
    )
    parser.add_argument("--encoder", required=True)
    parser.add_argument("--images", required=True)
    parser.add_argument("--out-features", required=True)
    parser.add_argument("--out-head", required=True)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--no-pretrained", action="store_true",
                        help="seeded random weights; shapes and files only")
    args = parser.parse_args(argv)
    try:
        manifest = ExportManifest(
            encoder=args.encoder,
            images=Path(args.images),
            out_features=Path(args.out_features),
            out_head=Path(args.out_head),
            batch_size=args.batch_size,
            device=args.device,
            pretrained=not args.no_pretrained,
        )
        x, y, num_classes, w, b = export(manifest)
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"wrote {manifest.out_features}: {x.shape[0]} features of dim {x.shape[1]}, "
        f"{num_classes} classes; head {w.shape[0]} x {w.shape[1]} -> {manifest.out_head}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
