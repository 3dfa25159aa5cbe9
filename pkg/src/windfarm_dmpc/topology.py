"""Rectangular farm geometry, wake travel delays and interaction sets.

Turbines are indexed row-major starting at the top row, zero-based:
``index = row * cols + col``. Column 0 is the most upwind turbine of each
row; the wind blows towards increasing column index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

__all__ = [
    "FarmLayout",
    "DelayTable",
    "InteractionSets",
    "LayoutError",
    "build_layout",
    "compute_delays",
    "interaction_sets",
    "round_half_away",
]


class LayoutError(ValueError):
    """Raised for an invalid farm specification; ``field`` names the culprit."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


def round_half_away(x):
    """Round to the nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class FarmLayout:
    rows: int
    cols: int
    downstream_spacing: float
    crosswind_spacing: float
    rotor_diameter: float
    free_stream: float
    air_density: float = 1.2
    sample_time: float = 1.0

    def __post_init__(self):
        for name in ("rows", "cols"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise LayoutError(name, f"must be an integer, got {value!r}")
            if value < 1:
                raise LayoutError(name, f"must be >= 1, got {value!r}")
            object.__setattr__(self, name, int(value))
        for name in ("downstream_spacing", "rotor_diameter", "free_stream",
                     "air_density", "sample_time"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0:
                raise LayoutError(name, f"must be positive and finite, got {value!r}")
            object.__setattr__(self, name, value)
        value = float(self.crosswind_spacing)
        if not math.isfinite(value) or value < 0:
            raise LayoutError("crosswind_spacing", f"must be non-negative, got {value!r}")
        object.__setattr__(self, "crosswind_spacing", value)

    @property
    def n_turbines(self):
        return self.rows * self.cols

    @property
    def rotor_area(self):
        return 0.25 * math.pi * self.rotor_diameter ** 2

    def index(self, row, col):
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise IndexError(f"(row={row}, col={col}) outside {self.rows}x{self.cols} farm")
        return row * self.cols + col

    def row_of(self, i):
        self._check(i)
        return i // self.cols

    def col_of(self, i):
        self._check(i)
        return i % self.cols

    def row_members(self, row):
        """Turbine indices of one row, most upwind first."""
        return list(range(row * self.cols, (row + 1) * self.cols))

    def most_upwind(self):
        """Index of the most upwind turbine of every row."""
        return [r * self.cols for r in range(self.rows)]

    def _check(self, i):
        if not 0 <= i < self.n_turbines:
            raise IndexError(f"turbine {i} outside farm of {self.n_turbines}")


_LAYOUT_KEYS = {
    "M": "rows", "rows": "rows",
    "N": "cols", "cols": "cols",
    "dx_r": "downstream_spacing", "downstream_spacing": "downstream_spacing",
    "dy_r": "crosswind_spacing", "crosswind_spacing": "crosswind_spacing",
    "D_r": "rotor_diameter", "rotor_diameter": "rotor_diameter",
    "V_inf": "free_stream", "free_stream": "free_stream",
    "rho": "air_density", "air_density": "air_density",
    "h": "sample_time", "sample_time": "sample_time",
}


def build_layout(config: Mapping) -> FarmLayout:
    """Build a validated layout from a mapping of Table-1 style keys.

    Accepts either the short symbols (``M``, ``N``, ``dx_r``, ``D_r``,
    ``V_inf``, ``rho``, ``h``) or the attribute names. A ``G`` entry, when
    present, must equal ``M * N``; anything else describes a
    non-rectangular farm and is rejected.
    """
    kwargs = {}
    for key, value in config.items():
        if key in ("G", "n_turbines"):
            continue
        if key not in _LAYOUT_KEYS:
            raise LayoutError(key, "unknown layout field")
        kwargs[_LAYOUT_KEYS[key]] = value
    for required in ("rows", "cols", "downstream_spacing", "rotor_diameter", "free_stream"):
        if required not in kwargs:
            raise LayoutError(required, "missing")
    kwargs.setdefault("crosswind_spacing", 0.0)
    for key in ("rows", "cols"):
        v = kwargs[key]
        if isinstance(v, str):
            try:
                v = float(v)
            except ValueError:
                raise LayoutError(key, f"not a number: {v!r}") from None
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        kwargs[key] = v
    for key, v in list(kwargs.items()):
        if key not in ("rows", "cols"):
            try:
                kwargs[key] = float(v)
            except (TypeError, ValueError):
                raise LayoutError(key, f"not a number: {v!r}") from None
    layout = FarmLayout(**kwargs)
    g = config.get("G", config.get("n_turbines"))
    if g is not None and int(float(g)) != layout.n_turbines:
        raise LayoutError("G", f"{g} turbines cannot form a {layout.rows}x{layout.cols} "
                               "rectangular farm")
    return layout


@dataclass(frozen=True)
class DelayTable:
    """Sample-count wake delays between same-row turbines.

    ``by_gap[n]`` is the delay across ``n`` column gaps; since rows are
    identical the table is stored once per column separation.
    """

    layout: FarmLayout
    by_gap: tuple

    def __call__(self, j, i):
        lay = self.layout
        if lay.row_of(j) != lay.row_of(i):
            raise KeyError(f"turbines {j} and {i} are in different rows")
        gap = lay.col_of(i) - lay.col_of(j)
        if gap <= 0:
            raise KeyError(f"turbine {j} is not upwind of {i}")
        return self.by_gap[gap]

    def gap_delay(self, i):
        """Delay from the upwind neighbour of ``i`` to ``i``."""
        return self(i - 1, i)

    def max_row_delay(self):
        return self.by_gap[-1] if len(self.by_gap) > 1 else 0

    def matrix(self):
        """Dense ``G x G`` array with ``-1`` where a delay is undefined."""
        lay = self.layout
        out = np.full((lay.n_turbines, lay.n_turbines), -1, dtype=int)
        for r in range(lay.rows):
            members = lay.row_members(r)
            for a, j in enumerate(members):
                for i in members[a + 1:]:
                    out[j, i] = self(j, i)
        return out

    def is_additive(self):
        """True when every delay equals the sum of its per-gap delays."""
        g1 = self.by_gap[1] if len(self.by_gap) > 1 else 0
        return all(d == n * g1 for n, d in enumerate(self.by_gap))


def compute_delays(layout: FarmLayout) -> DelayTable:
    """Wake travel time in samples, ``round(x / (V_inf * h))``.

    Distances are rotor plane to rotor plane, i.e. multiples of the
    downstream spacing.
    """
    step = layout.free_stream * layout.sample_time
    by_gap = tuple(round_half_away(n * layout.downstream_spacing / step)
                   for n in range(layout.cols))
    return DelayTable(layout, by_gap)


@dataclass(frozen=True)
class InteractionSets:
    """Upstream/downstream sets per turbine.

    ``upstream_neighbor[i]``/``downstream_neighbor[i]`` hold the direct
    neighbours, ``upstream[i]``/``downstream[i]`` every same-row turbine on
    that side, and the ``*_h`` variants only those whose wake delay to or
    from ``i`` fits in the horizon. All tuples are sorted by index.
    """

    horizon: int
    upstream_neighbor: tuple
    downstream_neighbor: tuple
    upstream: tuple
    downstream: tuple
    upstream_h: tuple
    downstream_h: tuple


def interaction_sets(layout: FarmLayout, delays: DelayTable, horizon: int) -> InteractionSets:
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
    horizon = int(horizon)
    up_nb, down_nb, up, down, up_h, down_h = ([] for _ in range(6))
    for i in range(layout.n_turbines):
        r, c = layout.row_of(i), layout.col_of(i)
        row = layout.row_members(r)
        upstream = tuple(row[:c])
        downstream = tuple(row[c + 1:])
        up.append(upstream)
        down.append(downstream)
        up_nb.append(upstream[-1:])
        down_nb.append(downstream[:1])
        up_h.append(tuple(j for j in upstream if delays(j, i) <= horizon))
        down_h.append(tuple(j for j in downstream if delays(i, j) <= horizon))
    return InteractionSets(horizon, *(tuple(x) for x in (up_nb, down_nb, up, down, up_h, down_h)))
