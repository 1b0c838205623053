"""Deterministic rendering of one day's items into a scrapbook page raster."""
from __future__ import annotations

import io
import json
import math
import textwrap
from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from PIL import Image, ImageDraw, ImageFont, ImageOps

from .corpus import MediaItem
from .policy import FRESH, DegradationState

Box = Tuple[int, int, int, int]

FONT_ID = "pil-embedded-6x11"
_FONT_CELL = (6, 11)
TEXT_PAD = 8
BACKGROUND = (255, 255, 255)
INK = (0, 0, 0)


class PageError(ValueError):
    def __init__(self, message: str, item_id: Optional[str] = None) -> None:
        self.item_id = item_id
        super().__init__(f"{item_id}: {message}" if item_id else message)


@dataclass(frozen=True)
class PageLayout:
    page_width: int = 1024
    tile_width: int = 512
    text_line_height: int = 14
    font: str = FONT_ID

    def __post_init__(self) -> None:
        if self.tile_width <= 0 or self.page_width % self.tile_width != 0:
            raise ValueError("page_width must be a positive multiple of tile_width")
        if self.font != FONT_ID:
            raise ValueError(f"unsupported font {self.font!r}")
        if self.text_line_height < _FONT_CELL[1]:
            raise ValueError("text_line_height smaller than the font cell")

    @property
    def columns(self) -> int:
        return self.page_width // self.tile_width

    @property
    def chars_per_line(self) -> int:
        return max(1, (self.tile_width - 2 * TEXT_PAD) // _FONT_CELL[0])


@dataclass
class ScrapbookPage:
    page_id: str
    date: date
    source_ids: List[str]
    raster: bytes
    width: int
    height: int
    base_width: int
    base_height: int
    layout: List[Tuple[str, Box]]
    texts: Dict[str, str] = field(default_factory=dict)
    captions: Dict[str, str] = field(default_factory=dict)
    fidelity: DegradationState = FRESH

    def sidecar(self) -> dict:
        return {
            "page_id": self.page_id,
            "date": self.date.isoformat(),
            "source_ids": list(self.source_ids),
            "width": self.width,
            "height": self.height,
            "base_width": self.base_width,
            "base_height": self.base_height,
            "layout": [[item_id, list(box)] for item_id, box in self.layout],
            "texts": dict(self.texts),
            "captions": dict(self.captions),
            "fidelity": self.fidelity.to_json(),
        }

    @classmethod
    def from_sidecar(cls, data: Mapping, raster: bytes) -> "ScrapbookPage":
        return cls(
            page_id=data["page_id"],
            date=date.fromisoformat(data["date"]),
            source_ids=list(data["source_ids"]),
            raster=raster,
            width=int(data["width"]),
            height=int(data["height"]),
            base_width=int(data["base_width"]),
            base_height=int(data["base_height"]),
            layout=[(item_id, tuple(box)) for item_id, box in data["layout"]],  # type: ignore[misc]
            texts=dict(data.get("texts", {})),
            captions=dict(data.get("captions", {})),
            fidelity=DegradationState.from_json(data["fidelity"]),
        )


def page_id_for(day: date) -> str:
    return f"page-{day.isoformat()}"


def _font() -> ImageFont.ImageFont:
    return ImageFont.load_default_imagefont()


def encode_jpeg(img: Image.Image, quality: int) -> bytes:
    buf = io.BytesIO()
    img.convert("RGB").save(buf, format="JPEG", quality=int(quality), subsampling=0, optimize=False)
    return buf.getvalue()


def decode_raster(raster: bytes) -> Image.Image:
    img = Image.open(io.BytesIO(raster))
    img.load()
    return img.convert("RGB")


def text_block(item: MediaItem) -> str:
    """Header line plus body, exactly as rendered on the page."""
    header = f"TS {item.timestamp.strftime('%H:%M')} |"
    subject = item.meta.get("subject", "")
    if subject:
        header += f" {subject}"
    return header + "\n" + item.payload


def _wrap(text: str, width: int) -> List[str]:
    lines: List[str] = []
    for para in text.split("\n"):
        wrapped = textwrap.wrap(para, width=width, break_long_words=True, replace_whitespace=True)
        lines.extend(wrapped or [""])
    return lines


def _latin1(text: str) -> str:
    return text.encode("latin-1", errors="replace").decode("latin-1")


def render_text_tile(text: str, layout: PageLayout) -> Image.Image:
    lines = _wrap(_latin1(text), layout.chars_per_line)
    height = 2 * TEXT_PAD + len(lines) * layout.text_line_height
    tile = Image.new("RGB", (layout.tile_width, height), BACKGROUND)
    draw = ImageDraw.Draw(tile)
    font = _font()
    for row, line in enumerate(lines):
        draw.text((TEXT_PAD, TEXT_PAD + row * layout.text_line_height), line, fill=INK, font=font)
    return tile


def scaled_height(width: int, height: int, tile_width: int) -> int:
    return max(1, int(math.floor(height * tile_width / width + 0.5)))


def render_image_tile(img: Image.Image, layout: PageLayout) -> Image.Image:
    img = ImageOps.exif_transpose(img).convert("RGB")
    return img.resize((layout.tile_width, scaled_height(img.width, img.height, layout.tile_width)), Image.LANCZOS)


def render_frames_tile(frames: Sequence[Image.Image], layout: PageLayout) -> Image.Image:
    """Keyframes as a 2-wide mosaic inside one tile, uniform cell height."""
    if not frames:
        raise ValueError("no frames")
    cols = 1 if len(frames) == 1 else 2
    cell_w = layout.tile_width // cols
    cells = [f.convert("RGB").resize((cell_w, scaled_height(f.width, f.height, cell_w)), Image.LANCZOS) for f in frames]
    cell_h = max(c.height for c in cells)
    rows = math.ceil(len(cells) / cols)
    tile = Image.new("RGB", (layout.tile_width, rows * cell_h), BACKGROUND)
    for i, cell in enumerate(cells):
        tile.paste(cell, ((i % cols) * cell_w, (i // cols) * cell_h))
    return tile


def grid_geometry(tile_heights: Sequence[int], layout: PageLayout) -> Tuple[List[Box], int]:
    """Boxes and page height for tiles placed row-major.

    Every row takes the height of the tallest tile on the page, so dropping an
    item can never make the page taller.
    """
    if not tile_heights:
        raise ValueError("no tiles")
    row_h = max(tile_heights)
    rows = math.ceil(len(tile_heights) / layout.columns)
    boxes = []
    for i, h in enumerate(tile_heights):
        x = (i % layout.columns) * layout.tile_width
        y = (i // layout.columns) * row_h
        boxes.append((x, y, x + layout.tile_width, y + h))
    return boxes, rows * row_h


def consolidate(
    day: date,
    items: Sequence[MediaItem],
    layout: PageLayout = PageLayout(),
    *,
    images: Optional[Mapping[str, Image.Image]] = None,
    frames: Optional[Mapping[str, Sequence[Image.Image]]] = None,
    root: Optional[Path] = None,
) -> ScrapbookPage:
    """Render one day's items into a fresh page (JPEG quality 100, scale 1.0).

    ``images`` and ``frames`` carry pre-decoded rasters keyed by item id;
    images missing from ``images`` are loaded from ``root / payload``.
    """
    if not items:
        raise PageError("cannot consolidate an empty item list")
    items = sorted(items, key=lambda it: (it.timestamp, it.id))
    images = images or {}
    frames = frames or {}
    tiles: List[Image.Image] = []
    texts: Dict[str, str] = {}
    captions: Dict[str, str] = {}
    for item in items:
        if item.day != day:
            raise PageError(f"item dated {item.day} does not belong to {day}", item.id)
        if item.kind == "text":
            block = text_block(item)
            texts[item.id] = block
            tiles.append(render_text_tile(block, layout))
            continue
        caption = item.meta.get("caption") or item.meta.get("summary")
        if caption:
            captions[item.id] = caption
        if item.kind == "video":
            if item.id not in frames:
                raise PageError("video must be expanded to keyframes before consolidation", item.id)
            tiles.append(render_frames_tile(frames[item.id], layout))
            continue
        img = images.get(item.id)
        if img is None:
            src = Path(item.payload) if root is None else Path(root) / item.payload
            try:
                with Image.open(src) as fh:
                    fh.load()
                    img = fh.copy()
            except (OSError, ValueError) as exc:
                raise PageError(f"undecodable image {src}: {exc}", item.id) from exc
        tiles.append(render_image_tile(img, layout))

    boxes, height = grid_geometry([t.height for t in tiles], layout)
    canvas = Image.new("RGB", (layout.page_width, height), BACKGROUND)
    for tile, box in zip(tiles, boxes):
        canvas.paste(tile, box[:2])
    raster = encode_jpeg(canvas, FRESH.applied_quality)
    return ScrapbookPage(
        page_id=page_id_for(day),
        date=day,
        source_ids=[it.id for it in items],
        raster=raster,
        width=layout.page_width,
        height=height,
        base_width=layout.page_width,
        base_height=height,
        layout=list(zip([it.id for it in items], boxes)),
        texts=texts,
        captions=captions,
        fidelity=FRESH,
    )


def page_bytes(page: ScrapbookPage) -> int:
    return len(page.raster)


def reencode(page: ScrapbookPage, quality: int) -> bytes:
    return encode_jpeg(decode_raster(page.raster), quality)


class PageStore:
    """One ``<page_id>.jpg`` plus ``<page_id>.json`` sidecar per page."""

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)

    def raster_path(self, page_id: str) -> Path:
        return self.directory / f"{page_id}.jpg"

    def sidecar_path(self, page_id: str) -> Path:
        return self.directory / f"{page_id}.json"

    def page_ids(self) -> List[str]:
        if not self.directory.is_dir():
            return []
        return sorted(p.stem for p in self.directory.glob("page-*.json"))

    def exists(self, page_id: str) -> bool:
        return self.raster_path(page_id).is_file() and self.sidecar_path(page_id).is_file()

    def write(self, page: ScrapbookPage, *, suffix: str = "") -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        self.raster_path(page.page_id).with_name(f"{page.page_id}.jpg{suffix}").write_bytes(page.raster)
        self.sidecar_path(page.page_id).with_name(f"{page.page_id}.json{suffix}").write_text(
            json.dumps(page.sidecar(), sort_keys=True, indent=1), encoding="utf-8"
        )

    def read(self, page_id: str) -> ScrapbookPage:
        sidecar = self.sidecar_path(page_id)
        if not sidecar.is_file():
            raise FileNotFoundError(f"missing sidecar for {page_id}")
        data = json.loads(sidecar.read_text(encoding="utf-8"))
        return ScrapbookPage.from_sidecar(data, self.raster_path(page_id).read_bytes())

    def read_all(self) -> List[ScrapbookPage]:
        return [self.read(pid) for pid in self.page_ids()]


def with_raster(page: ScrapbookPage, raster: bytes, width: int, height: int, fidelity: DegradationState) -> ScrapbookPage:
    sx = width / page.width
    sy = height / page.height
    layout = []
    for item_id, (x0, y0, x1, y1) in page.layout:
        box = (
            min(width - 1, int(math.floor(x0 * sx))),
            min(height - 1, int(math.floor(y0 * sy))),
            max(1, min(width, int(math.ceil(x1 * sx)))),
            max(1, min(height, int(math.ceil(y1 * sy)))),
        )
        layout.append((item_id, box))
    return replace(page, raster=raster, width=width, height=height, layout=layout, fidelity=fidelity)
