"""Scalp channel layouts and their 16x16 raster cells."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np

GRID_SIZE = 16


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelLayout:
    names: tuple[str, ...]
    coords: np.ndarray  # channels x 2, unit disc, +y towards the nose
    cells: np.ndarray  # channels x 2 integer (row, col)
    modality: str
    regions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=float)
        cells = np.asarray(self.cells, dtype=np.int64)
        n = len(self.names)
        if coords.shape != (n, 2) or cells.shape != (n, 2):
            raise LayoutError("coords/cells must be (n_channels, 2)")
        if self.modality not in ("EEG", "fNIRS"):
            raise LayoutError(f"unknown modality {self.modality!r}")
        if cells.size and (cells.min() < 0 or cells.max() >= GRID_SIZE):
            raise LayoutError("grid cell outside the 16x16 raster")
        if len({tuple(c) for c in cells}) != n:
            raise LayoutError(f"two {self.modality} channels share a grid cell")
        if np.any(np.hypot(coords[:, 0], coords[:, 1]) > 1.0 + 1e-9):
            raise LayoutError("coordinates must lie inside the unit disc")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "names", tuple(self.names))
        regions = tuple(self.regions) if self.regions else ("",) * n
        object.__setattr__(self, "regions", regions)

    def __len__(self) -> int:
        return len(self.names)

    def region_indices(self, *regions: str) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.regions) if r in regions], dtype=np.int64)


def _parse(payload: dict) -> dict[str, ChannelLayout]:
    out = {}
    for modality in ("EEG", "fNIRS"):
        rows = [c for c in payload["channels"] if c["modality"] == modality]
        out[modality] = ChannelLayout(
            names=[c["name"] for c in rows],
            coords=[[c["x"], c["y"]] for c in rows],
            cells=[[c["grid_row"], c["grid_col"]] for c in rows],
            modality=modality,
            regions=[c.get("region", "") for c in rows],
        )
    return out


def load_layouts(path: str | Path | None = None) -> dict[str, ChannelLayout]:
    """Read a layout file; ``None`` gives the bundled 30 EEG + 36 fNIRS reference layout."""
    if path is None:
        return reference_layouts()
    try:
        payload = json.loads(Path(path).read_text())
        return _parse(payload)
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise LayoutError(f"malformed layout file {path}: {exc}") from exc


@lru_cache(maxsize=1)
def reference_layouts() -> dict[str, ChannelLayout]:
    text = resources.files("scdm.data").joinpath("layout_v1.json").read_text()
    return _parse(json.loads(text))


def chebyshev_grid_distance(a: ChannelLayout, i: int, b: ChannelLayout, j: int) -> int:
    return int(np.max(np.abs(a.cells[i] - b.cells[j])))


GRID_EXTENT = 0.9  # raster spans [-0.9, 0.9] in both scalp coordinates


def cell_centres(size: int = GRID_SIZE, extent: float = GRID_EXTENT) -> np.ndarray:
    """Scalp (x, y) of every raster cell centre, shape (size, size, 2); row 0 is frontal."""
    step = 2 * extent / size
    centre = (np.arange(size) + 0.5) * step
    x = -extent + centre
    y = extent - centre
    return np.stack(np.meshgrid(x, y, indexing="xy"), axis=-1)
