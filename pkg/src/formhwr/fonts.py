"""Font sources for text rendering.

Two kinds of fonts are supported: TrueType/OpenType files rasterized via
Pillow, and a built-in 5x7 bitmap face covering the default alphabet. The
bitmap face makes rendering fully self-contained and bit-reproducible, so
tests and fixtures never depend on installed font files.
"""

from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import ImageFont

from .errors import ConfigurationError

FALLBACK_FONT_ID = "fallback-5x7"

# Each glyph is 7 rows of 5 cells; '#' is ink. The grid is top-aligned on a
# shared baseline; lowercase letters occupy the lower part of the cell.
_GLYPHS_5X7 = {
    " ": ("     ", "     ", "     ", "     ", "     ", "     ", "     "),
    "0": (" ### ", "#   #", "#  ##", "# # #", "##  #", "#   #", " ### "),
    "1": ("  #  ", " ##  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    "2": (" ### ", "#   #", "    #", "   # ", "  #  ", " #   ", "#####"),
    "3": ("#####", "   # ", "  #  ", "   # ", "    #", "#   #", " ### "),
    "4": ("   # ", "  ## ", " # # ", "#  # ", "#####", "   # ", "   # "),
    "5": ("#####", "#    ", "#### ", "    #", "    #", "#   #", " ### "),
    "6": ("  ## ", " #   ", "#    ", "#### ", "#   #", "#   #", " ### "),
    "7": ("#####", "    #", "   # ", "  #  ", " #   ", " #   ", " #   "),
    "8": (" ### ", "#   #", "#   #", " ### ", "#   #", "#   #", " ### "),
    "9": (" ### ", "#   #", "#   #", " ####", "    #", "   # ", " ##  "),
    "A": (" ### ", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"),
    "B": ("#### ", "#   #", "#   #", "#### ", "#   #", "#   #", "#### "),
    "C": (" ### ", "#   #", "#    ", "#    ", "#    ", "#   #", " ### "),
    "D": ("###  ", "#  # ", "#   #", "#   #", "#   #", "#  # ", "###  "),
    "E": ("#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#####"),
    "F": ("#####", "#    ", "#    ", "#### ", "#    ", "#    ", "#    "),
    "G": (" ### ", "#   #", "#    ", "# ###", "#   #", "#   #", " ### "),
    "H": ("#   #", "#   #", "#   #", "#####", "#   #", "#   #", "#   #"),
    "I": (" ### ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    "J": ("  ###", "   # ", "   # ", "   # ", "   # ", "#  # ", " ##  "),
    "K": ("#   #", "#  # ", "# #  ", "##   ", "# #  ", "#  # ", "#   #"),
    "L": ("#    ", "#    ", "#    ", "#    ", "#    ", "#    ", "#####"),
    "M": ("#   #", "## ##", "# # #", "# # #", "#   #", "#   #", "#   #"),
    "N": ("#   #", "##  #", "# # #", "#  ##", "#   #", "#   #", "#   #"),
    "O": (" ### ", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "),
    "P": ("#### ", "#   #", "#   #", "#### ", "#    ", "#    ", "#    "),
    "Q": (" ### ", "#   #", "#   #", "#   #", "# # #", "#  # ", " ## #"),
    "R": ("#### ", "#   #", "#   #", "#### ", "# #  ", "#  # ", "#   #"),
    "S": (" ####", "#    ", "#    ", " ### ", "    #", "    #", "#### "),
    "T": ("#####", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  "),
    "U": ("#   #", "#   #", "#   #", "#   #", "#   #", "#   #", " ### "),
    "V": ("#   #", "#   #", "#   #", "#   #", "#   #", " # # ", "  #  "),
    "W": ("#   #", "#   #", "#   #", "# # #", "# # #", "## ##", "#   #"),
    "X": ("#   #", "#   #", " # # ", "  #  ", " # # ", "#   #", "#   #"),
    "Y": ("#   #", "#   #", " # # ", "  #  ", "  #  ", "  #  ", "  #  "),
    "Z": ("#####", "    #", "   # ", "  #  ", " #   ", "#    ", "#####"),
    "a": ("     ", "     ", " ### ", "    #", " ####", "#   #", " ####"),
    "b": ("#    ", "#    ", "#### ", "#   #", "#   #", "#   #", "#### "),
    "c": ("     ", "     ", " ### ", "#    ", "#    ", "#   #", " ### "),
    "d": ("    #", "    #", " ####", "#   #", "#   #", "#   #", " ####"),
    "e": ("     ", "     ", " ### ", "#   #", "#####", "#    ", " ### "),
    "f": ("  ## ", " #  #", " #   ", "###  ", " #   ", " #   ", " #   "),
    "g": ("     ", " ####", "#   #", "#   #", " ####", "    #", " ### "),
    "h": ("#    ", "#    ", "#### ", "#   #", "#   #", "#   #", "#   #"),
    "i": ("  #  ", "     ", " ##  ", "  #  ", "  #  ", "  #  ", " ### "),
    "j": ("   # ", "     ", "  ## ", "   # ", "   # ", "#  # ", " ##  "),
    "k": ("#    ", "#    ", "#  # ", "# #  ", "##   ", "# #  ", "#  # "),
    "l": (" ##  ", "  #  ", "  #  ", "  #  ", "  #  ", "  #  ", " ### "),
    "m": ("     ", "     ", "## # ", "# # #", "# # #", "# # #", "#   #"),
    "n": ("     ", "     ", "#### ", "#   #", "#   #", "#   #", "#   #"),
    "o": ("     ", "     ", " ### ", "#   #", "#   #", "#   #", " ### "),
    "p": ("     ", "#### ", "#   #", "#   #", "#### ", "#    ", "#    "),
    "q": ("     ", " ####", "#   #", "#   #", " ####", "    #", "    #"),
    "r": ("     ", "     ", "# ## ", "##  #", "#    ", "#    ", "#    "),
    "s": ("     ", "     ", " ####", "#    ", " ### ", "    #", "#### "),
    "t": (" #   ", " #   ", "###  ", " #   ", " #   ", " #  #", "  ## "),
    "u": ("     ", "     ", "#   #", "#   #", "#   #", "#  ##", " ## #"),
    "v": ("     ", "     ", "#   #", "#   #", "#   #", " # # ", "  #  "),
    "w": ("     ", "     ", "#   #", "#   #", "# # #", "# # #", " # # "),
    "x": ("     ", "     ", "#   #", " # # ", "  #  ", " # # ", "#   #"),
    "y": ("     ", "#   #", "#   #", " ####", "    #", "#   #", " ### "),
    "z": ("     ", "     ", "#####", "   # ", "  #  ", " #   ", "#####"),
    ".": ("     ", "     ", "     ", "     ", "     ", " ##  ", " ##  "),
    ",": ("     ", "     ", "     ", "     ", " ##  ", "  #  ", " #   "),
    "-": ("     ", "     ", "     ", " ### ", "     ", "     ", "     "),
    "/": ("    #", "    #", "   # ", "  #  ", " #   ", "#    ", "#    "),
    "'": ("  #  ", "  #  ", " #   ", "     ", "     ", "     ", "     "),
    ":": ("     ", " ##  ", " ##  ", "     ", " ##  ", " ##  ", "     "),
}

_GRID_H = 7
_GRID_W = 5
_ADVANCE_UNITS = 6  # glyph cell plus one blank column


def _pattern_to_array(rows: tuple[str, ...]) -> np.ndarray:
    return np.array([[c == "#" for c in row] for row in rows], dtype=np.float64)


def _scale_up(cell: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear upsample of a glyph cell grid (anti-aliased edges)."""
    in_h, in_w = cell.shape
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = cell[np.ix_(y0, x0)]
    b = cell[np.ix_(y0, x1)]
    c = cell[np.ix_(y1, x0)]
    d = cell[np.ix_(y1, x1)]
    return a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx + c * wy * (1 - wx) + d * wy * wx


class BitmapFont:
    """Fixed 5x7 bitmap face scaled to the requested text height."""

    def __init__(self, font_id: str = FALLBACK_FONT_ID, glyphs: dict | None = None):
        self.font_id = font_id
        self._glyphs = {ch: _pattern_to_array(rows) for ch, rows in (glyphs or _GLYPHS_5X7).items()}

    def has_glyph(self, ch: str) -> bool:
        return ch in self._glyphs

    def with_aliases(self, aliases: dict[str, str], font_id: str) -> "BitmapFont":
        """New font where each key character reuses the value's bitmap."""
        patterns = dict(_GLYPHS_5X7)
        for target, source in aliases.items():
            patterns[target] = patterns[source]
        return BitmapFont(font_id, patterns)

    def glyph(self, ch: str, text_height: int) -> tuple[np.ndarray, float]:
        """Return (ink array in [0,1] of height text_height, advance in px)."""
        cell = self._glyphs[ch]
        scale = text_height / _GRID_H
        out_w = max(1, round(_GRID_W * scale))
        ink = _scale_up(cell, text_height, out_w)
        return ink, _ADVANCE_UNITS * scale


class TrueTypeFont:
    """TrueType/OpenType face rasterized through Pillow, one glyph at a time."""

    def __init__(self, path: str | Path, font_id: str | None = None):
        self.path = str(path)
        self.font_id = font_id or Path(path).stem
        self._sized: dict[int, ImageFont.FreeTypeFont] = {}

    def _at_height(self, text_height: int) -> ImageFont.FreeTypeFont:
        font = self._sized.get(text_height)
        if font is None:
            # Pixel size approximates cap height + descender; good enough as
            # the line box, the renderer crops tight afterwards.
            font = ImageFont.truetype(self.path, text_height)
            self._sized[text_height] = font
        return font

    def has_glyph(self, ch: str) -> bool:
        if ch == " ":
            return True
        try:
            mask = self._at_height(32).getmask(ch, mode="L")
        except OSError:
            return False
        return mask.size[0] > 0 and mask.size[1] > 0

    def glyph(self, ch: str, text_height: int) -> tuple[np.ndarray, float]:
        font = self._at_height(text_height)
        advance = font.getlength(ch)
        if ch == " ":
            return np.zeros((text_height, max(1, round(advance))), dtype=np.float64), advance
        mask = font.getmask(ch, mode="L")
        w, h = mask.size
        if w == 0 or h == 0:
            return np.zeros((text_height, 1), dtype=np.float64), advance
        ink = np.frombuffer(bytes(mask), dtype=np.uint8).reshape(h, w) / 255.0
        return ink, advance


class FontSet:
    """Id-addressable collection of fonts; always contains the fallback."""

    def __init__(self, fonts: list | None = None):
        self.fallback = BitmapFont()
        self._by_id = {self.fallback.font_id: self.fallback}
        for f in fonts or []:
            self._by_id[f.font_id] = f

    @property
    def ids(self) -> list[str]:
        return list(self._by_id)

    def add(self, font) -> None:
        self._by_id[font.font_id] = font

    def resolve(self, font_id: str):
        try:
            return self._by_id[font_id]
        except KeyError:
            raise ConfigurationError(f"font id {font_id!r} is not loaded") from None


@lru_cache(maxsize=8)
def load_fonts(fonts_dir: str | None) -> FontSet:
    """FontSet from a directory of .ttf/.otf files plus the fallback face."""
    fonts = FontSet()
    if fonts_dir:
        root = Path(fonts_dir)
        if not root.is_dir():
            raise ConfigurationError(f"fonts directory {fonts_dir!r} does not exist")
        for path in sorted(root.glob("*.[to]tf")):
            fonts.add(TrueTypeFont(path))
    return fonts
