"""Dataset ingestion: manifests, word bounding boxes, and page-image crops.

A dataset manifest is UTF-8 JSON of the form::

    {"pages": [{"page_id": str, "image_path": str, "label": str|null,
                "words": [{"x": int, "y": int, "w": int, "h": int,
                           "char_count": int, "text": str|null}]}]}

Labels are one of Blackletter / Roman / Mixed (case-insensitive on input).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from html.parser import HTMLParser
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError, OutOfBoundsError, ValidationError

CLASSES = ("Blackletter", "Roman", "Mixed")
_CANONICAL = {c.lower(): c for c in CLASSES}

# Heuristic bounds for dropping noisy OCR boxes (decorations, bleed-through):
# aspect ratio w/h, height as a fraction of page height, area as a fraction
# of page area. Overridable per call.
ASPECT_RANGE = (0.2, 25.0)
HEIGHT_FRAC_RANGE = (0.005, 0.25)
MAX_AREA_FRAC = 0.20


def canonical_label(label: str) -> str:
    """Normalize a class label string; raises ValidationError when unknown."""
    got = _CANONICAL.get(label.strip().lower())
    if got is None:
        raise ValidationError(f"unknown label {label!r}; expected one of {', '.join(CLASSES)}")
    return got


@dataclass(frozen=True)
class WordBox:
    """An OCR word bounding box on a page image."""

    x: int
    y: int
    width: int
    height: int
    char_count: int
    text: str | None = None


@dataclass
class PageRecord:
    """One scanned page: its image location, label (if known), and word boxes."""

    page_id: str
    image_path: str
    words: list[WordBox] = field(default_factory=list)
    label: str | None = None


def load_dataset(manifest_path: str | Path) -> list[PageRecord]:
    """Parse a manifest file into PageRecords, preserving entry order."""
    path = Path(manifest_path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("pages"), list):
        raise ManifestError(f"{path}: top level must be an object with a 'pages' array")

    records = []
    seen_ids: set[str] = set()
    for i, entry in enumerate(doc["pages"]):
        where = f"{path}: pages[{i}]"
        if not isinstance(entry, dict):
            raise ManifestError(f"{where}: expected an object")
        try:
            page_id = entry["page_id"]
            image_path = entry["image_path"]
            words_raw = entry.get("words", [])
        except KeyError as exc:
            raise ManifestError(f"{where}: missing field {exc.args[0]!r}") from exc
        if not isinstance(page_id, str) or not isinstance(image_path, str):
            raise ManifestError(f"{where}: page_id and image_path must be strings")
        if page_id in seen_ids:
            raise ManifestError(f"{where}: duplicate page_id {page_id!r}")
        seen_ids.add(page_id)
        label = entry.get("label")
        if label is not None:
            if not isinstance(label, str):
                raise ManifestError(f"{where}: label must be a string or null")
            label = canonical_label(label)
        if not isinstance(words_raw, list):
            raise ManifestError(f"{where}: 'words' must be an array")
        words = []
        for j, wdict in enumerate(words_raw):
            try:
                words.append(
                    WordBox(
                        x=int(wdict["x"]),
                        y=int(wdict["y"]),
                        width=int(wdict["w"]),
                        height=int(wdict["h"]),
                        char_count=int(wdict["char_count"]),
                        text=wdict.get("text"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{where}.words[{j}]: {exc}") from exc
            if words[-1].width <= 0 or words[-1].height <= 0 or words[-1].char_count < 0:
                raise ManifestError(
                    f"{where}.words[{j}]: width/height must be positive and char_count >= 0"
                )
        records.append(PageRecord(page_id=page_id, image_path=image_path, words=words, label=label))
    return records


def filter_word_boxes(
    page: PageRecord,
    page_width: int,
    page_height: int,
    *,
    aspect_range: tuple[float, float] = ASPECT_RANGE,
    height_frac_range: tuple[float, float] = HEIGHT_FRAC_RANGE,
    max_area_frac: float = MAX_AREA_FRAC,
) -> PageRecord:
    """Drop boxes unlikely to contain text; keeps the survivors' order.

    A box is retained when it has at least one recognized character, an
    aspect ratio within aspect_range, a height within height_frac_range of
    the page height, and an area of at most max_area_frac of the page.
    """
    if page_width <= 0 or page_height <= 0:
        raise ValidationError(f"page dimensions must be positive, got {page_width}x{page_height}")
    page_area = page_width * page_height
    kept = []
    for box in page.words:
        aspect = box.width / box.height
        height_frac = box.height / page_height
        area_frac = (box.width * box.height) / page_area
        if (
            box.char_count >= 1
            and aspect_range[0] <= aspect <= aspect_range[1]
            and height_frac_range[0] <= height_frac <= height_frac_range[1]
            and area_frac <= max_area_frac
        ):
            kept.append(box)
    return replace(page, words=kept)


def crop_word(page_image: np.ndarray, box: WordBox) -> np.ndarray:
    """Copy out the box region, clamped to the image bounds."""
    h, w = page_image.shape
    x0 = max(0, box.x)
    y0 = max(0, box.y)
    x1 = min(w, box.x + box.width)
    y1 = min(h, box.y + box.height)
    if x0 >= x1 or y0 >= y1:
        raise OutOfBoundsError(
            f"box ({box.x},{box.y},{box.width},{box.height}) lies outside the {w}x{h} image"
        )
    return page_image[y0:y1, x0:x1].copy()


def load_page_image(image_path: str | Path) -> np.ndarray:
    """Load a page scan as 8-bit grayscale; RGB converts via BT.601 luma."""
    with Image.open(image_path) as im:
        if im.mode in ("L", "1"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.rint(luma), 0, 255).astype(np.uint8)


class _HocrParser(HTMLParser):
    """Pulls ocrx_word boxes out of an hOCR document."""

    def __init__(self) -> None:
        super().__init__()
        self.words: list[dict] = []
        self._depth = 0

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        classes = attrs.get("class", "").split()
        if self._depth > 0:
            self._depth += 1
            return
        if "ocrx_word" in classes or "ocr_word" in classes:
            bbox = _parse_hocr_bbox(attrs.get("title", ""))
            if bbox is not None:
                self.words.append({"bbox": bbox, "text": ""})
                self._depth = 1

    def handle_endtag(self, tag):
        if self._depth > 0:
            self._depth -= 1

    def handle_data(self, data):
        if self._depth > 0 and self.words:
            self.words[-1]["text"] += data


def _parse_hocr_bbox(title: str) -> tuple[int, int, int, int] | None:
    for part in title.split(";"):
        fields = part.split()
        if len(fields) == 5 and fields[0] == "bbox":
            try:
                x0, y0, x1, y1 = (int(v) for v in fields[1:])
            except ValueError:
                return None
            return x0, y0, x1, y1
    return None


def hocr_to_words(hocr_text: str) -> list[WordBox]:
    """Convert hOCR word spans to WordBoxes (char_count = recognized length)."""
    parser = _HocrParser()
    parser.feed(hocr_text)
    boxes = []
    for wd in parser.words:
        x0, y0, x1, y1 = wd["bbox"]
        text = wd["text"].strip()
        if x1 > x0 and y1 > y0:
            boxes.append(
                WordBox(x=x0, y=y0, width=x1 - x0, height=y1 - y0, char_count=len(text), text=text or None)
            )
    return boxes


def page_to_manifest_entry(page: PageRecord) -> dict:
    """Inverse of load_dataset for one page (used when writing manifests)."""
    return {
        "page_id": page.page_id,
        "image_path": page.image_path,
        "label": page.label,
        "words": [
            {"x": b.x, "y": b.y, "w": b.width, "h": b.height, "char_count": b.char_count, "text": b.text}
            for b in page.words
        ],
    }


def save_dataset(records: list[PageRecord], manifest_path: str | Path) -> None:
    """Write PageRecords back out as a manifest file."""
    doc = {"pages": [page_to_manifest_entry(p) for p in records]}
    Path(manifest_path).write_text(json.dumps(doc, indent=1), encoding="utf-8")
