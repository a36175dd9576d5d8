"""Rasterise the bundled glyph atlas (one-off; output is committed).

Glyphs come from Aileron Regular (CC0), which Pillow embeds for
``ImageFont.load_default(size=...)``. Each of the 62 classes is drawn in a
CELL x CELL tile on a shared baseline, thresholded to binary, and the tiles are
laid out in a single row of a PNG.
"""
import argparse
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from scenetext.textcnn import CHARSET

CELL = 48
FONT_SIZE = 36


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument(
        "--out",
        default=str(Path(__file__).resolve().parents[1] / "src/scenetext/data/glyph_atlas.png"),
    )
    args = ap.parse_args()
    font = ImageFont.load_default(size=FONT_SIZE)
    ascent, _ = font.getmetrics()
    baseline = CELL - 10
    tiles = []
    for ch in CHARSET:
        im = Image.new("L", (CELL, CELL), 0)
        d = ImageDraw.Draw(im)
        width = d.textlength(ch, font=font)
        d.text(((CELL - width) / 2, baseline - ascent), ch, font=font, fill=255)
        tile = (np.asarray(im) >= 128).astype(np.uint8) * 255
        assert tile.any(), ch
        tiles.append(tile)
    Image.fromarray(np.concatenate(tiles, axis=1)).save(args.out, optimize=True)
    print(f"wrote {len(tiles)} glyphs to {args.out}")


if __name__ == "__main__":
    main()
