"""Node-indexed fields bound to a SurfaceGrid.

The operators in this package work on plain numpy arrays of shape (n,), (n, 3)
or (n, 3, 3).  The public entry points of the projections, the limit-equation
configuration and the thin-domain spec wrap their weights in WeightField and
their velocities in TangentField, so grid mismatches and non-positive weights
are caught where the value comes in.
"""

from dataclasses import dataclass

import numpy as np

from core.errors import ConfigurationError, UsageError

TANGENT_TOL = 1e-10


def as_values(grid, field, kind="scalar"):
    """Return the raw array of ``field`` after checking it belongs to ``grid``.

    Accepts Field instances or arrays.  Raises UsageError on a grid mismatch.
    """
    if isinstance(field, Field):
        if field.grid is not grid:
            raise UsageError(f"{type(field).__name__} is bound to a different grid")
        values = field.values
    else:
        values = np.asarray(field, dtype=float)
    trailing = {"scalar": (), "vector": (3,), "matrix": (3, 3)}[kind]
    if values.shape[values.ndim - len(trailing) - 1 :] != (grid.size,) + trailing:
        raise UsageError(
            f"expected {kind} field with {grid.size} nodes, got array of shape {values.shape}"
        )
    return values


@dataclass(frozen=True, eq=False)
class Field:
    grid: object
    values: np.ndarray

    kind = "scalar"

    def __post_init__(self):
        object.__setattr__(self, "values", as_values(self.grid, self.values, self.kind))

    def integrate(self):
        return self.grid.integrate(self.values)


class ScalarField(Field):
    kind = "scalar"


class TangentField(Field):
    """Tangential vector field; values are projected with P on construction."""

    kind = "vector"

    def __post_init__(self):
        super().__post_init__()
        projected = self.grid.tangential(self.values)
        object.__setattr__(self, "values", projected)


class WeightField(ScalarField):
    """Thickness weight g with a positive lower bound."""

    def __init__(self, grid, values, lower_bound=None):
        values = as_values(grid, values, "scalar")
        gmin = float(np.min(values))
        if lower_bound is None:
            lower_bound = gmin
        if lower_bound <= 0.0 or gmin < lower_bound:
            raise ConfigurationError(
                f"weight must satisfy min g >= c > 0 (min g = {gmin:.6g}, c = {lower_bound:.6g})"
            )
        super().__init__(grid, values)
        object.__setattr__(self, "lower_bound", float(lower_bound))

    @classmethod
    def constant(cls, grid, value=1.0):
        return cls(grid, np.full(grid.size, float(value)))

    @property
    def is_constant(self):
        return bool(np.ptp(self.values) == 0.0)
