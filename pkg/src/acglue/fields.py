"""Gridded scalar fields with coordinate metadata."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidSpec


@dataclass
class GridField:
    """Scalar samples on a tube grid or a Cartesian box.

    coords is "fermi" (values indexed (surface nodes..., t)) or "cartesian"
    (values indexed (nx, ny, nz)). NaN entries are allowed only where an
    accompanying mask marks samples outside the usable region.
    """

    values: np.ndarray
    coords: str
    chart: object = None          # FermiChart for tube fields
    box: Optional[tuple] = None   # (origin, spacing) for cartesian fields
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        bad = ~np.isfinite(self.values)
        if self.mask is not None:
            bad = bad & self.mask
        if np.any(bad):
            raise InvalidSpec("field contains non-finite values inside its mask")

    @property
    def axisym(self):
        return self.coords == "fermi" and self.values.ndim == 2

    def masked(self):
        if self.mask is None:
            return self.values
        return np.where(self.mask, self.values, np.nan)
