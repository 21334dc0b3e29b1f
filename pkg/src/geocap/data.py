"""Region-feature and caption ingestion, vocabulary, and a synthetic dataset.

On-disk formats are line-delimited JSON so records stay diff-able:

* features file: one object per line with fields ``id``, ``width``,
  ``height``, ``boxes`` (list of [x, y, w, h] in corner format, pixels)
  and ``features`` (list of per-region float lists, uniform width).
* captions file: one object per line with fields ``id`` and
  ``captions`` (non-empty list of strings).
* vocab file: a ``# min_count=N`` header then one ``token<TAB>count``
  line per kept token, in id order.

Boxes are converted to center format at load time. The synthetic
generator lays colored shapes on a 224x224 canvas and captions them
with a deterministic template, so the caption is a pure function of
the regions' attributes and positions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attention import Box
from .errors import ParseError, ValidationError
from .metrics import tokenize

__all__ = [
    "PAD_ID", "BOS_ID", "EOS_ID", "UNK_ID", "SPECIAL_TOKENS",
    "ImageRecord", "CaptionRecord", "Vocabulary", "PairedExample",
    "load_features", "write_features", "load_captions", "write_captions",
    "build_vocab", "encode_caption", "split_dataset", "join_examples",
    "synth_generate", "caption_for_regions",
]

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")

CANVAS = 224
SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue")


@dataclass
class ImageRecord:
    """One image's detector output: region features plus box geometry."""

    id: str
    image_width: float
    image_height: float
    boxes: list
    features: np.ndarray

    def validate(self) -> None:
        if not self.boxes:
            raise ValidationError(f"record {self.id}: needs at least one region")
        if self.features.ndim != 2 or self.features.shape[0] != len(self.boxes):
            raise ValidationError(
                f"record {self.id}: {len(self.boxes)} boxes but feature matrix "
                f"of shape {self.features.shape}")
        for b in self.boxes:
            x0, y0 = b.cx - b.w / 2, b.cy - b.h / 2
            x1, y1 = b.cx + b.w / 2, b.cy + b.h / 2
            if x0 < 0 or y0 < 0 or x1 > self.image_width or y1 > self.image_height:
                raise ValidationError(f"record {self.id}: box {b} exceeds image bounds")


@dataclass
class CaptionRecord:
    id: str
    captions: list

    def validate(self) -> None:
        if not self.captions:
            raise ValidationError(f"record {self.id}: caption list is empty")


@dataclass
class PairedExample:
    """An image record joined with its reference captions."""

    record: ImageRecord
    captions: list


class Vocabulary:
    """Bidirectional token/id map with four reserved specials at ids 0..3."""

    def __init__(self, tokens_with_counts: Sequence[tuple], min_count: int = 1):
        self.min_count = min_count
        self._counts = list(tokens_with_counts)
        self._id_to_token = list(SPECIAL_TOKENS) + [t for t, _ in self._counts]
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ValidationError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self._id_to_token)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def token_of(self, idx: int) -> str:
        return self._id_to_token[idx]

    def tokens_of(self, ids: Sequence[int]) -> list:
        """Content tokens for a decoded id sequence; <unk> survives, the
        structural specials do not."""
        return [self._id_to_token[i]
                for i in ids if i not in (PAD_ID, BOS_ID, EOS_ID)]

    def save(self, path) -> None:
        lines = [f"# min_count={self.min_count}\n"]
        lines += [f"{tok}\t{cnt}\n" for tok, cnt in self._counts]
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(lines)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or not lines[0].startswith("# min_count="):
            raise ParseError(f"{path}: missing vocab header")
        try:
            min_count = int(lines[0].split("=", 1)[1])
        except ValueError as err:
            raise ParseError(f"{path}: bad min_count header") from err
        counts = []
        for ln, line in enumerate(lines[1:], start=2):
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path} line {ln}: expected token<TAB>count")
            counts.append((parts[0], int(parts[1])))
        return cls(counts, min_count=min_count)


def build_vocab(captions: Sequence[CaptionRecord], min_count: int = 1) -> Vocabulary:
    """Count tokens over all captions and keep those seen >= min_count times.

    Kept tokens are ordered by descending count then ascending token,
    making ids deterministic across runs and platforms.
    """
    if not captions:
        raise ValidationError("caption corpus is empty")
    counts: dict = {}
    for rec in captions:
        for cap in rec.captions:
            for tok in tokenize(cap):
                counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(((t, c) for t, c in counts.items() if c >= min_count),
                  key=lambda item: (-item[1], item[0]))
    return Vocabulary(kept, min_count=min_count)


def encode_caption(raw: str, vocab: Vocabulary, max_len: int) -> list:
    """Token ids wrapped in <bos>/<eos>, truncated to max_len with <eos> last."""
    ids = [BOS_ID] + [vocab.id_of(t) for t in tokenize(raw)] + [EOS_ID]
    if len(ids) > max_len:
        ids = ids[:max_len - 1] + [EOS_ID]
    return ids


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _corner_to_center(quad) -> Box:
    x, y, w, h = (float(v) for v in quad)
    return Box(cx=x + w / 2.0, cy=y + h / 2.0, w=w, h=h)


def _center_to_corner(box: Box) -> list:
    return [box.cx - box.w / 2.0, box.cy - box.h / 2.0, box.w, box.h]


def load_features(path) -> list:
    """Parse a features file into validated ImageRecords."""
    records = []
    feat_width = None
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = ImageRecord(
                    id=str(obj["id"]),
                    image_width=float(obj["width"]),
                    image_height=float(obj["height"]),
                    boxes=[_corner_to_center(q) for q in obj["boxes"]],
                    features=np.array(obj["features"], dtype=np.float64),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as err:
                raise ParseError(f"{path} line {ln}: {err}") from err
            rec.validate()
            if feat_width is None:
                feat_width = rec.features.shape[1]
            elif rec.features.shape[1] != feat_width:
                raise ValidationError(
                    f"record {rec.id}: feature width {rec.features.shape[1]} "
                    f"differs from earlier width {feat_width}")
            records.append(rec)
    return records


def write_features(records: Sequence[ImageRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "id": rec.id,
                "width": rec.image_width,
                "height": rec.image_height,
                "boxes": [_center_to_corner(b) for b in rec.boxes],
                "features": rec.features.tolist(),
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def load_captions(path) -> list:
    records = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = CaptionRecord(id=str(obj["id"]),
                                    captions=[str(c) for c in obj["captions"]])
            except (KeyError, TypeError, json.JSONDecodeError) as err:
                raise ParseError(f"{path} line {ln}: {err}") from err
            rec.validate()
            records.append(rec)
    return records


def write_captions(records: Sequence[CaptionRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"id": rec.id, "captions": rec.captions}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def join_examples(features: Sequence[ImageRecord],
                  captions: Sequence[CaptionRecord]) -> list:
    """One-to-one join by id, in feature-record order."""
    by_id = {c.id: c for c in captions}
    if len(by_id) != len(captions):
        raise ValidationError("duplicate ids in caption records")
    out = []
    for rec in features:
        cap = by_id.pop(rec.id, None)
        if cap is None:
            raise ValidationError(f"record {rec.id}: no matching captions")
        out.append(PairedExample(record=rec, captions=list(cap.captions)))
    if by_id:
        missing = next(iter(by_id))
        raise ValidationError(f"record {missing}: captions without features")
    return out


def split_dataset(records: Sequence, seed: int, dev_count: int) -> tuple:
    """Seed-deterministic shuffle, then carve off a dev partition."""
    if dev_count >= len(records):
        raise ValidationError(
            f"dev_count {dev_count} must be smaller than the dataset ({len(records)})")
    order = np.random.default_rng(seed).permutation(len(records))
    dev = [records[i] for i in order[:dev_count]]
    train = [records[i] for i in order[dev_count:]]
    return train, dev


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def caption_for_regions(regions: Sequence[tuple]) -> str:
    """The generator's caption template.

    ``regions`` holds (shape, color, Box) triples. Regions are sorted
    by geometry so the text never depends on input order; the first two
    get a relational phrase chosen by which axis separates them more,
    the rest trail as "and color shape" clauses.
    """
    ordered = sorted(regions, key=lambda r: (r[2].cx, r[2].cy, r[2].w, r[2].h))
    names = [f"{color} {shape}" for shape, color, _ in ordered]
    if len(ordered) == 1:
        return names[0]
    a, b = ordered[0], ordered[1]
    if abs(a[2].cx - b[2].cx) >= abs(a[2].cy - b[2].cy):
        head = f"{names[0]} left of {names[1]}"
    elif a[2].cy <= b[2].cy:
        head = f"{names[0]} above {names[1]}"
    else:
        head = f"{names[1]} above {names[0]}"
    extras = "".join(f" and {name}" for name in names[2:])
    return head + extras


def _region_features(shape_idx: int, color_idx: int, box: Box,
                     d_feat: int, rng: np.random.Generator) -> np.ndarray:
    feat = np.zeros(d_feat)
    feat[shape_idx] = 1.0
    feat[3 + color_idx] = 1.0
    feat[6] = box.cx / CANVAS
    feat[7] = box.cy / CANVAS
    if d_feat > 8:
        feat[8:] = rng.normal(0.0, 0.05, d_feat - 8)
    return feat


def synth_generate(n_images: int, seed: int, d_feat: int) -> tuple:
    """Deterministic shapes-on-canvas dataset.

    Every image gets 2 to 5 regions, each a colored shape with a box
    that fits the canvas. Features carry one-hot shape and color, the
    normalized box center, and seeded noise padding; the caption comes
    from :func:`caption_for_regions`, so it depends on the geometry as
    well as the attributes. Each image derives its own generator from
    (seed, index), making every record a pure function of the two.
    """
    if n_images < 1:
        raise ValidationError("n_images must be at least 1")
    if d_feat < 8:
        raise ValidationError("d_feat must be at least 8")
    features, captions = [], []
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        k = int(rng.integers(2, 6))
        regions = []
        rows = []
        for _ in range(k):
            shape_idx = int(rng.integers(3))
            color_idx = int(rng.integers(3))
            w = float(rng.uniform(20.0, 80.0))
            h = float(rng.uniform(20.0, 80.0))
            cx = float(rng.uniform(w / 2.0, CANVAS - w / 2.0))
            cy = float(rng.uniform(h / 2.0, CANVAS - h / 2.0))
            box = Box(cx=cx, cy=cy, w=w, h=h)
            regions.append((SHAPES[shape_idx], COLORS[color_idx], box))
            rows.append(_region_features(shape_idx, color_idx, box, d_feat, rng))
        rec = ImageRecord(
            id=f"synth-{i:05d}",
            image_width=float(CANVAS),
            image_height=float(CANVAS),
            boxes=[r[2] for r in regions],
            features=np.stack(rows),
        )
        rec.validate()
        features.append(rec)
        captions.append(CaptionRecord(id=rec.id,
                                      captions=[caption_for_regions(regions)]))
    return features, captions
