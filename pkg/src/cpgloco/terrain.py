"""Ground models: flat plane and bilinear heightfield grids.

Heightfield file format (plain text): first line `nx ny cell_size_m`,
followed by nx*ny heights in row-major order (x-index major).  The grid is
centered on the world origin.
"""

import numpy as np


class Terrain:
    """Flat terrain (height 0 everywhere) unless built from a heightfield."""

    kind = "flat"

    def height(self, x, y):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y)))


class Heightfield(Terrain):
    kind = "heightfield"

    def __init__(self, heights, cell_size):
        heights = np.asarray(heights, dtype=float)
        if heights.ndim != 2 or heights.shape[0] < 2 or heights.shape[1] < 2:
            raise ValueError("heightfield needs a 2-D grid of at least 2x2 nodes")
        if cell_size <= 0:
            raise ValueError("cell size must be positive")
        self.heights = heights
        self.cell = float(cell_size)
        self.x0 = -0.5 * (heights.shape[0] - 1) * self.cell
        self.y0 = -0.5 * (heights.shape[1] - 1) * self.cell

    def height(self, x, y):
        """Bilinear interpolation; queries beyond the grid clamp to the border."""
        gx = np.clip((np.asarray(x, dtype=float) - self.x0) / self.cell, 0.0, self.heights.shape[0] - 1.0)
        gy = np.clip((np.asarray(y, dtype=float) - self.y0) / self.cell, 0.0, self.heights.shape[1] - 1.0)
        ix = np.minimum(gx.astype(int), self.heights.shape[0] - 2)
        iy = np.minimum(gy.astype(int), self.heights.shape[1] - 2)
        fx = gx - ix
        fy = gy - iy
        h00 = self.heights[ix, iy]
        h10 = self.heights[ix + 1, iy]
        h01 = self.heights[ix, iy + 1]
        h11 = self.heights[ix + 1, iy + 1]
        return (h00 * (1 - fx) * (1 - fy) + h10 * fx * (1 - fy)
                + h01 * (1 - fx) * fy + h11 * fx * fy)


def terrain_height(x, y, terrain):
    """Ground height under (x, y) for the given terrain model."""
    return terrain.height(x, y)


def load_heightfield(path):
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: expected header 'nx ny cell_size_m'")
        nx, ny = int(header[0]), int(header[1])
        cell = float(header[2])
        values = []
        for line in fh:
            values.extend(float(tok) for tok in line.split())
    if len(values) != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} heights, found {len(values)}")
    return Heightfield(np.array(values).reshape(nx, ny), cell)


def save_heightfield(field, path):
    with open(path, "w") as fh:
        fh.write(f"{field.heights.shape[0]} {field.heights.shape[1]} {field.cell}\n")
        for row in field.heights:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
