"""Unified detection-centric data pipeline.

Detection categories, grounding phrases, and image captions all become the
same thing here: a list of (box, caption) pairs on an image. Detection and
grounding text is templated ("a photo of {}.") and normalized; captions
are kept verbatim and get an image-sized box. One schema, one JSON-lines
format, no per-source branches downstream.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field

import numpy as np

from .boxes import BoxError, validate_xyxy

SOURCE_KINDS = ("detection", "grounding", "image_text")

# CLIP-style caption templates; per-sample choice is recorded for reproducibility
TEMPLATES = {
    "photo": "a photo of {}.",
    "picture": "a picture of {}.",
    "image": "an image of {}.",
    "plain": "{}.",
}
DEFAULT_TEMPLATE = "photo"


class ParseError(ValueError):
    """Malformed input record; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def normalize_text(text: str) -> str:
    """Lowercase, collapse internal whitespace, single terminal period."""
    collapsed = re.sub(r"\s+", " ", text.strip().lower())
    stripped = collapsed.rstrip(" .")
    if not stripped:
        raise ValueError(f"text {text!r} is empty after normalization")
    return stripped + "."


def apply_template(phrase: str, template: str = DEFAULT_TEMPLATE) -> str:
    """Prompt a category name or phrase into a normalized caption."""
    if template not in TEMPLATES:
        raise KeyError(f"unknown template {template!r}; known: {sorted(TEMPLATES)}")
    phrase = phrase.strip().rstrip(".").strip()
    if not phrase:
        raise ValueError("empty category/phrase")
    return normalize_text(TEMPLATES[template].format(phrase))


@dataclass
class UnifiedSample:
    """The (image, boxes, texts) triplet shared by all three data sources.

    ``image_ref`` is a path string or an inline uint8 HxW x3 array; boxes are
    absolute-pixel xyxy, one text label per box.
    """

    image_ref: "str | np.ndarray"
    width: int
    height: int
    boxes: np.ndarray
    text_labels: list[str]
    source_kind: str
    template: str | None = None
    category_names: list[str] | None = None  # pre-template names, kept for eval/audit

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.validate()

    def validate(self) -> None:
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source_kind {self.source_kind!r}")
        if len(self.boxes) != len(self.text_labels):
            raise ValueError(
                f"{len(self.boxes)} boxes but {len(self.text_labels)} labels"
            )
        validate_xyxy(self.boxes, self.width, self.height)
        if isinstance(self.image_ref, np.ndarray):
            h, w = self.image_ref.shape[:2]
            if (w, h) != (self.width, self.height):
                raise ValueError(
                    f"inline image is {w}x{h} but sample says {self.width}x{self.height}"
                )
        if self.source_kind == "image_text":
            if len(self.boxes) != 1:
                raise ValueError("image_text sample must carry exactly one caption box")
            full = [0.0, 0.0, float(self.width), float(self.height)]
            if not np.array_equal(self.boxes[0], full):
                raise ValueError(f"caption box {self.boxes[0].tolist()} != image-sized {full}")
        for label in self.text_labels:
            if not label.strip():
                raise ValueError("blank text label")


def _image_wh(image, wh):
    if isinstance(image, np.ndarray):
        return image, int(image.shape[1]), int(image.shape[0])
    if wh is None:
        raise ValueError("wh=(W, H) is required when image is a path")
    return image, int(wh[0]), int(wh[1])


def unify_detection(image, instances, wh=None, template: str = DEFAULT_TEMPLATE) -> UnifiedSample:
    """Detection annotations (category, xyxy box) -> unified sample.

    An empty instance list is a valid negative image.
    """
    image, w, h = _image_wh(image, wh)
    boxes, labels, names = [], [], []
    for category, box in instances:
        labels.append(apply_template(category, template))
        names.append(str(category))
        boxes.append(box)
    return UnifiedSample(
        image_ref=image,
        width=w,
        height=h,
        boxes=np.array(boxes, dtype=np.float64).reshape(-1, 4),
        text_labels=labels,
        source_kind="detection",
        template=template,
        category_names=names,
    )


def unify_grounding(image, phrases, wh=None, template: str = DEFAULT_TEMPLATE) -> UnifiedSample:
    """Grounding annotations (phrase, xyxy box) -> unified sample.

    Phrases share the detection template: grounding is treated as detection
    with free-form category names, so text statistics stay comparable.
    """
    sample = unify_detection(image, phrases, wh=wh, template=template)
    sample.source_kind = "grounding"
    return sample


def unify_image_text(image, caption: str, wh=None, category: str | None = None) -> UnifiedSample:
    """Caption + image -> unified sample with one image-sized box.

    The caption is kept verbatim (it already is a caption); ``category``
    optionally records the generating concept for synthetic corpora so the
    similarity scorer can audit caption quality.
    """
    image, w, h = _image_wh(image, wh)
    if not caption or not caption.strip():
        raise ValueError("empty caption")
    return UnifiedSample(
        image_ref=image,
        width=w,
        height=h,
        boxes=np.array([[0.0, 0.0, float(w), float(h)]]),
        text_labels=[caption],
        source_kind="image_text",
        category_names=[category] if category is not None else None,
    )


# -- prompt sets ---------------------------------------------------------------


@dataclass
class PromptSet:
    """Per-batch prompted texts: deduplicated positives then sampled negatives."""

    prompts: list[str]
    positive_indices: list[int]
    capacity: int = 150

    def __post_init__(self):
        if len(self.prompts) > self.capacity:
            raise ValueError(f"{len(self.prompts)} prompts exceed capacity {self.capacity}")
        if len(set(self.prompts)) != len(self.prompts):
            raise ValueError("duplicate prompts")
        for i in self.positive_indices:
            if not 0 <= i < len(self.prompts):
                raise ValueError(f"positive index {i} out of range")

    def __len__(self) -> int:
        return len(self.prompts)


def build_prompt_set(positives, negative_pool, capacity: int = 150, rng_seed: int = 0) -> PromptSet:
    """Positives (one per instance, duplicates fine) + seeded negative sampling.

    Prompts are normalized before deduplication; negatives are drawn without
    replacement from the pool minus the positives, padding the set up to
    min(capacity, available). A short pool is not an error.
    """
    norm_pos = [normalize_text(p) for p in positives]
    unique_pos: list[str] = []
    index_of: dict[str, int] = {}
    for p in norm_pos:
        if p not in index_of:
            index_of[p] = len(unique_pos)
            unique_pos.append(p)
    if len(unique_pos) > capacity:
        raise ValueError(f"{len(unique_pos)} unique positives exceed capacity {capacity}")
    pool = []
    seen = set(unique_pos)
    for cand in negative_pool:
        cand = normalize_text(cand)
        if cand not in seen:
            seen.add(cand)
            pool.append(cand)
    rng = np.random.default_rng(rng_seed)
    n_neg = min(capacity - len(unique_pos), len(pool))
    chosen = rng.choice(len(pool), size=n_neg, replace=False) if n_neg else []
    prompts = unique_pos + [pool[i] for i in chosen]
    return PromptSet(
        prompts=prompts,
        positive_indices=[index_of[p] for p in norm_pos],
        capacity=capacity,
    )


def collect_prompt_pool(samples) -> list[str]:
    """Union of all prompt strings in a manifest, sorted for determinism."""
    pool = set()
    for s in samples:
        for label in s.text_labels:
            pool.add(normalize_text(label))
    return sorted(pool)


# -- image-text filtering --------------------------------------------------------


@dataclass
class ImageTextPair:
    image_ref: "str | np.ndarray"
    caption: str
    category: str | None = None
    wh: tuple[int, int] | None = None


@dataclass
class ScoredPair:
    image_ref: "str | np.ndarray"
    caption: str
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"non-finite score {self.score}")


def score_pairs(pairs, scorer):
    """Score each pair; scorer failures skip the pair and are counted.

    Returns (scored, n_failed) with input order preserved.
    """
    scored, failed = [], 0
    for pair in pairs:
        try:
            s = float(scorer(pair))
            scored.append(ScoredPair(image_ref=pair.image_ref, caption=pair.caption, score=s))
        except Exception:
            failed += 1
    return scored, failed


def filter_pairs(pairs, policy: str, k: int, rng_seed: int = 0):
    """Keep k pairs by score policy: rank_top, rank_bottom, or random_select.

    Ties (and random_select) are deterministic: stable sort keeps input
    order, random selection is seeded.
    """
    pairs = list(pairs)
    if k > len(pairs):
        raise ValueError(f"k={k} exceeds {len(pairs)} pairs")
    scores = np.array([p.score for p in pairs])
    if policy == "rank_top":
        order = np.argsort(-scores, kind="stable")[:k]
    elif policy == "rank_bottom":
        order = np.argsort(scores, kind="stable")[:k]
    elif policy == "random_select":
        order = np.random.default_rng(rng_seed).choice(len(pairs), size=k, replace=False)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    return [pairs[i] for i in order]


# -- JSON-lines on-disk format ---------------------------------------------------


def sample_to_record(sample: UnifiedSample) -> dict:
    if isinstance(sample.image_ref, np.ndarray):
        arr = np.ascontiguousarray(sample.image_ref, dtype=np.uint8)
        image = {"b64": base64.b64encode(arr.tobytes()).decode("ascii"), "shape": list(arr.shape)}
    else:
        image = sample.image_ref
    record = {
        "image": image,
        "wh": [sample.width, sample.height],
        "boxes": [[float(v) for v in b] for b in sample.boxes],
        "labels": list(sample.text_labels),
        "source": sample.source_kind,
    }
    if sample.template is not None:
        record["template"] = sample.template
    if sample.category_names is not None:
        record["categories"] = list(sample.category_names)
    return record


def sample_from_record(record: dict, line: int | None = None) -> UnifiedSample:
    try:
        image = record["image"]
        if isinstance(image, dict):
            shape = tuple(image["shape"])
            image = np.frombuffer(base64.b64decode(image["b64"]), dtype=np.uint8).reshape(shape)
        return UnifiedSample(
            image_ref=image,
            width=int(record["wh"][0]),
            height=int(record["wh"][1]),
            boxes=np.array(record["boxes"], dtype=np.float64).reshape(-1, 4),
            text_labels=list(record["labels"]),
            source_kind=record["source"],
            template=record.get("template"),
            category_names=record.get("categories"),
        )
    except (KeyError, IndexError, TypeError, ValueError, BoxError) as exc:
        raise ParseError(str(exc), line=line) from exc


def write_jsonl(samples, path) -> int:
    n = 0
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), sort_keys=True) + "\n")
            n += 1
    return n


def read_jsonl(path):
    samples = []
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON: {exc}", line=i) from exc
            samples.append(sample_from_record(record, line=i))
    return samples


# -- source-format parsers ---------------------------------------------------------


def parse_coco(obj, template: str = DEFAULT_TEMPLATE):
    """COCO-style detection dict (images/annotations/categories) -> samples.

    Annotation boxes are [x, y, w, h]; output is sorted by image id.
    """
    try:
        categories = {c["id"]: c["name"] for c in obj["categories"]}
        images = {im["id"]: im for im in obj["images"]}
    except (KeyError, TypeError) as exc:
        raise ParseError(f"bad COCO structure: {exc}") from exc
    per_image: dict[int, list] = {im_id: [] for im_id in images}
    for k, ann in enumerate(obj.get("annotations", [])):
        try:
            x, y, w, h = ann["bbox"]
            per_image[ann["image_id"]].append(
                (categories[ann["category_id"]], [x, y, x + w, y + h])
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"bad annotation #{k}: {exc}") from exc
    samples = []
    for im_id in sorted(images):
        im = images[im_id]
        try:
            samples.append(
                unify_detection(
                    im["file_name"],
                    per_image[im_id],
                    wh=(im["width"], im["height"]),
                    template=template,
                )
            )
        except (KeyError, ValueError, BoxError) as exc:
            raise ParseError(f"image id {im_id}: {exc}") from exc
    return samples


def parse_grounding_jsonl(lines, template: str = DEFAULT_TEMPLATE):
    """Grounding JSON-lines, one (image, phrase, box) per line.

    Consecutive lines for the same image merge into one sample.
    """
    groups: list[tuple[str, tuple, list]] = []
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            image, wh = rec["image"], tuple(rec["wh"])
            entry = (str(rec["phrase"]), list(rec["box"]))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"bad grounding record: {exc}", line=i) from exc
        if groups and groups[-1][0] == image and groups[-1][1] == wh:
            groups[-1][2].append(entry)
        else:
            groups.append((image, wh, [entry]))
    samples = []
    for image, wh, phrases in groups:
        samples.append(unify_grounding(image, phrases, wh=wh, template=template))
    return samples


def parse_image_text_tsv(lines, default_wh=None):
    """Image-text TSV: path <tab> caption [<tab> WxH]."""
    samples = []
    for i, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise ParseError("expected 'path<TAB>caption'", line=i)
        path, caption = parts[0], parts[1]
        wh = default_wh
        if len(parts) >= 3 and parts[2].strip():
            try:
                w, h = parts[2].lower().split("x")
                wh = (int(w), int(h))
            except ValueError as exc:
                raise ParseError(f"bad WxH field {parts[2]!r}", line=i) from exc
        if wh is None:
            raise ParseError("no WxH column and no default size configured", line=i)
        try:
            samples.append(unify_image_text(path, caption, wh=wh))
        except ValueError as exc:
            raise ParseError(str(exc), line=i) from exc
    return samples
