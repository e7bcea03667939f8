from pathlib import Path
from typing import Union
import logging

import numpy as np
from PIL import Image

from .similarity import ContrastiveMask, MaskCell

logger = logging.getLogger('gebd.render')
logging.getLogger('PIL').setLevel(logging.WARNING)

# blue positive, red negative, gray neutral, black boundary
MASK_COLORS = {
    MaskCell.POSITIVE: (66, 110, 214),
    MaskCell.NEGATIVE: (214, 66, 66),
    MaskCell.NEUTRAL: (190, 190, 190),
}
BOUNDARY_COLOR = (0, 0, 0)


def similarity_to_image(sim: np.ndarray, scale: int = 4) -> Image.Image:
    """Grayscale image of one L×L similarity matrix, -1 black to +1 white."""
    pixels = np.clip((np.asarray(sim, dtype=np.float64) + 1.0) * 127.5, 0, 255).astype(np.uint8)
    img = Image.fromarray(pixels)
    return img.resize((img.width * scale, img.height * scale), Image.Resampling.NEAREST)


def tsm_grid_image(tsm: np.ndarray, columns: int = 4, scale: int = 4, gap: int = 2) -> Image.Image:
    """Tile the channels of a C×L×L stack, row-major in stream order."""
    tiles = [similarity_to_image(channel, scale) for channel in np.asarray(tsm)]
    rows = -(-len(tiles) // columns)
    size = tiles[0].width
    grid = Image.new("L", (columns * size + (columns - 1) * gap, rows * size + (rows - 1) * gap), 255)
    for n, tile in enumerate(tiles):
        r, c = divmod(n, columns)
        grid.paste(tile, (c * (size + gap), r * (size + gap)))
    return grid


def mask_image(mask: ContrastiveMask, scale: int = 8) -> Image.Image:
    pixels = np.zeros((mask.length, mask.length, 3), dtype=np.uint8)
    for cell, color in MASK_COLORS.items():
        pixels[mask.cells == cell] = color
    for b in mask.boundary_indices:
        pixels[b, b] = BOUNDARY_COLOR
    img = Image.fromarray(pixels)
    return img.resize((img.width * scale, img.height * scale), Image.Resampling.NEAREST)


def save_image(img: Image.Image, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path, format="PNG")
    logger.info(f"Wrote {path}")
    return path
