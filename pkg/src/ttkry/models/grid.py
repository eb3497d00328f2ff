import math
from typing import List, Sequence

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Grid1D(BaseModel):
    """
    Represents a uniform grid of n interior nodes on [-1, 1].

    The stencils use the mesh symbol h = 1/(n+1); node coordinates are spread
    uniformly over [-1, 1].
    """

    n: int = Field(..., ge=2)

    model_config = ConfigDict(frozen=True)

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    def nodes(self) -> npt.NDArray[np.float64]:
        """Interior node coordinates x_1..x_n."""
        return -1.0 + 2.0 * np.arange(1, self.n + 1) / (self.n + 1)

    def midpoints(self) -> npt.NDArray[np.float64]:
        """The n+1 cell midpoints x_{i+1/2}, i = 0..n, including both boundary cells."""
        return -1.0 + (2.0 * np.arange(self.n + 1) + 1.0) / (self.n + 1)


class KLCoefficient(BaseModel):
    """
    Represents the affine coefficient a(x, y) = 1 + sum_j sqrt(lambda_j) sin(pi j x) y_j.

    Parameters are collocated on ``ny`` uniformly spaced points of [-1, 1]
    (endpoints included).
    """

    d: int = Field(..., ge=0)
    nx: int = Field(..., ge=2)
    ny: int = Field(2, ge=2)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def check_ellipticity(self) -> "KLCoefficient":
        if self.lower_bound() <= 0.0:
            raise ValueError(
                f"coefficient is not uniformly elliptic: lower bound {self.lower_bound()}"
            )
        return self

    @property
    def amplitudes(self) -> List[float]:
        """sqrt(lambda_j) = 1 / (2 (j+1)^2) for j = 1..d."""
        return [1.0 / (2.0 * (j + 1) ** 2) for j in range(1, self.d + 1)]

    @property
    def grid(self) -> Grid1D:
        return Grid1D(n=self.nx)

    def lower_bound(self) -> float:
        return 1.0 - sum(self.amplitudes)

    def parameter_grid(self) -> npt.NDArray[np.float64]:
        return np.linspace(-1.0, 1.0, self.ny)

    def mode(self, j: int, x: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Spatial mode a_j(x); a_0 is identically one."""
        xs = np.asarray(x, dtype=np.float64)
        if j == 0:
            return np.ones_like(xs)
        return np.sin(math.pi * j * xs)

    def evaluate(self, x: float, ys: Sequence[float]) -> float:
        """Pointwise value a(x, y) for a parameter vector of length d."""
        if len(ys) != self.d:
            raise ValueError(f"expected {self.d} parameters, got {len(ys)}")
        value = 1.0
        for j, (amplitude, y) in enumerate(zip(self.amplitudes, ys), start=1):
            value += amplitude * math.sin(math.pi * j * x) * y
        return value
