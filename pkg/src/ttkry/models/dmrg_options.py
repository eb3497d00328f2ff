import math
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class LocalEpsPolicy(str, Enum):
    """Accuracy of a single supercore split relative to the target accuracy."""

    EPS_OVER_D = "eps/d"
    EPS_OVER_SQRT = "eps/sqrt(d-1)"


class DmrgOptions(BaseModel):
    """
    Represents the settings of a two-site DMRG truncation.

    ``rank_boost`` extra singular vectors are kept after every split on top of
    the ones required by the local accuracy. With ``final_cleanup`` a standard
    SVD rounding without boost is applied to the converged iterate.
    """

    eps: float = Field(..., gt=0.0)
    max_sweeps: int = Field(10, ge=1)
    rank_boost: int = Field(3, ge=0)
    local_eps_policy: LocalEpsPolicy = LocalEpsPolicy.EPS_OVER_D
    final_cleanup: bool = True
    rmax: Optional[int] = Field(None, ge=1)

    model_config = ConfigDict(frozen=True)

    def local_eps(self, d: int) -> float:
        if d <= 1:
            return self.eps
        if self.local_eps_policy is LocalEpsPolicy.EPS_OVER_SQRT:
            return self.eps / math.sqrt(d - 1)
        return self.eps / d
