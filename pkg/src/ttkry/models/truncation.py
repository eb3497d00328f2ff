import math
import sys
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class LocalPolicy(str, Enum):
    """How the relative tolerance is split over the d-1 unfoldings of a train."""

    SPLIT_SQRT = "split-sqrt"
    SPLIT_D = "split-d"


class TruncationSpec(BaseModel):
    """
    Represents the (eps, rmax) pair governing a rounding call.

    ``eps`` is a relative Frobenius tolerance, ``rmax`` caps every TT rank
    (``None`` means unbounded).
    """

    eps: float = Field(0.0, ge=0.0)
    rmax: Optional[int] = Field(None, ge=1)
    local_policy: LocalPolicy = LocalPolicy.SPLIT_SQRT

    model_config = ConfigDict(frozen=True)

    @property
    def rank_cap(self) -> int:
        return self.rmax if self.rmax is not None else sys.maxsize

    def local_threshold(self, d: int) -> float:
        """Relative threshold applied to each of the d-1 unfoldings."""
        if d <= 1:
            return self.eps
        if self.local_policy is LocalPolicy.SPLIT_D:
            return self.eps / d
        return self.eps / math.sqrt(d - 1)

    def with_eps(self, eps: float) -> "TruncationSpec":
        return self.model_copy(update={"eps": eps})
