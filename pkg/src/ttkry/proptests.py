"""
Seeded property runner behind ``ttkry proptests``.

Every case draws its data from ``numpy.random.default_rng([seed, index])`` so a
report depends only on the seed, the case count and the fault flag.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ttkry.arith import add, dot, hadamard, linear_combination, matvec
from ttkry.dmrg import dmrg_truncate
from ttkry.models.dmrg_options import DmrgOptions
from ttkry.models.experiment import ExperimentConfig, PropertyReport, PropertyResult
from ttkry.models.truncation import TruncationSpec
from ttkry.oracle import best_rank_error, dense_from_tt, dense_vector, relative_error
from ttkry.rounding import orthogonal_norm, round
from ttkry.tensor import (
    TTTensor,
    dequantize,
    digit_counts,
    full,
    ones,
    quantize,
    random_tt,
    random_tt_matrix,
)

logger = logging.getLogger(__name__)

ROUNDING_EPS = (1e-1, 1e-3, 1e-6)
MAX_D = 5
MAX_N = 6
MAX_RANK = 8
# the dense oracle of the quasi-optimality check sees at most MAX_N ** MAX_D entries
ORACLE_GUARD = MAX_N**MAX_D
DMRG_CASES = 10
DMRG_EPS = 1e-4
DMRG_NOISE = 1e-6
# overlap of each mode vector of the hidden term with the start
HIDDEN_OVERLAP = 0.05
# relative floating-point slack on every bound
SLACK = 1e-8

SpecFactory = Callable[[float, Optional[int]], TruncationSpec]


class InflatedThresholdSpec(TruncationSpec):
    """Fault injection: every local threshold is ten times too loose."""

    def local_threshold(self, d: int) -> float:
        return 10.0 * super().local_threshold(d)


def _spec_factory(inject_fault: bool) -> SpecFactory:
    kind = InflatedThresholdSpec if inject_fault else TruncationSpec
    return lambda eps, rmax=None: kind(eps=eps, rmax=rmax)


@dataclass
class RoundingCase:
    index: int
    shape: Tuple[int, ...]
    rank: int
    eps: float
    tensor: TTTensor

    def describe(self) -> Dict[str, Any]:
        return {"case": self.index, "shape": list(self.shape), "rank": self.rank, "eps": self.eps}


def rounding_case(seed: int, index: int) -> RoundingCase:
    rng = np.random.default_rng([seed, index])
    d = int(rng.integers(2, MAX_D + 1))
    shape = tuple(int(n) for n in rng.integers(2, MAX_N + 1, size=d))
    rank = int(rng.integers(1, MAX_RANK + 1))
    eps = float(ROUNDING_EPS[index % len(ROUNDING_EPS)])
    tensor = random_tt(shape, rank, rng)
    # geometric core scaling gives the unfoldings a decaying spectrum
    decay = [core * np.exp(-np.arange(core.shape[2]))[None, None, :] for core in tensor.cores]
    return RoundingCase(index, shape, rank, eps, TTTensor(tuple(decay)))


def _dense(t: TTTensor) -> np.ndarray:
    return np.asarray(full(t).values)


def check_error_bound(case: RoundingCase, make_spec: SpecFactory) -> Optional[str]:
    exact = _dense(case.tensor)
    approx = _dense(round(case.tensor, make_spec(case.eps, None)))
    norm = float(np.linalg.norm(exact))
    error = float(np.linalg.norm(approx - exact))
    if error > case.eps * norm * (1 + SLACK) + SLACK * norm:
        return f"||T(t) - t|| = {error:.3e} > eps ||t|| = {case.eps * norm:.3e}"
    return None


def check_rank_monotone(case: RoundingCase, make_spec: SpecFactory) -> Optional[str]:
    rmax = case.rank if case.index % 2 else None
    rounded = round(case.tensor, make_spec(case.eps, rmax))
    for k, (before, after) in enumerate(zip(case.tensor.ranks, rounded.ranks)):
        if after > before or (rmax is not None and after > rmax):
            return f"rank {k} grew from {before} to {after} (rmax {rmax})"
    return None


def check_idempotence(case: RoundingCase, make_spec: SpecFactory) -> Optional[str]:
    spec = make_spec(case.eps, None)
    once = round(case.tensor, spec)
    twice = round(once, spec)
    if any(b > a for a, b in zip(once.ranks, twice.ranks)):
        return f"second rounding raised ranks {once.ranks} -> {twice.ranks}"
    change = relative_error(_dense(twice), _dense(once))
    if change > case.eps * (1 + SLACK) + SLACK:
        return f"second rounding moved values by {change:.3e} > eps"

    capped = make_spec(0.0, case.rank)
    once = round(case.tensor, capped)
    twice = round(once, capped)
    grew = any(b > a for a, b in zip(once.ranks, twice.ranks))
    if grew or relative_error(_dense(twice), _dense(once)) > 1e-10:
        return f"rank-capped rounding is not a projection: {once.ranks} -> {twice.ranks}"
    return None


def check_quasi_optimality(case: RoundingCase, make_spec: SpecFactory) -> Optional[str]:
    d = len(case.shape)
    cap = max(1, case.rank - 1 - case.index % 3)
    rounded = round(case.tensor, make_spec(0.0, cap))
    exact = full(case.tensor)
    reference = best_rank_error(exact, [cap] * (d - 1), guard=ORACLE_GUARD)
    achieved = float(np.linalg.norm(_dense(rounded) - np.asarray(exact.values)))
    bound = math.sqrt(d - 1) * reference.lower_bound
    if achieved > bound * (1 + SLACK) + SLACK * exact.norm():
        return f"error {achieved:.3e} above sqrt(d-1) * lower bound {bound:.3e} at cap {cap}"
    return None


def check_arithmetic(case: RoundingCase, make_spec: SpecFactory) -> Optional[str]:
    rng = np.random.default_rng([case.index, 1])
    shape = case.shape[:4]
    a = random_tt(shape, 2, rng)
    b = random_tt(shape, 3, rng)
    op = random_tt_matrix(shape, 2, rng)
    da, db = dense_vector(a), dense_vector(b)
    checks = {
        "add": relative_error(dense_vector(add(a, b)), da + db),
        "hadamard": relative_error(dense_vector(hadamard(a, b)), da * db),
        "dot": relative_error([dot(a, b)], [float(np.dot(da, db))]),
        "matvec": relative_error(dense_vector(matvec(op, a)), dense_from_tt(op) @ da),
    }
    bad = {name: err for name, err in checks.items() if err > 1e-10}
    return None if not bad else f"disagrees with the dense result: {bad}"


def check_quantize(case: RoundingCase, make_spec: SpecFactory) -> Optional[str]:
    rng = np.random.default_rng([case.index, 2])
    shape = tuple(int(2 ** rng.integers(0, 4)) for _ in case.shape[:3])
    t = random_tt(shape, 2, rng)
    q = quantize(t, 2)
    if relative_error(_dense(q), _dense(t)) > 1e-12:
        return f"quantization of {shape} changed values"
    back = dequantize(q, digit_counts(shape, 2))
    if back.shape != shape or relative_error(_dense(back), _dense(t)) > 1e-12:
        return f"dequantization did not restore {shape}"
    return None


ROUNDING_PROPERTIES: Sequence[Tuple[str, Callable[[RoundingCase, SpecFactory], Optional[str]]]] = (
    ("rounding_error_bound", check_error_bound),
    ("rounding_rank_monotone", check_rank_monotone),
    ("rounding_idempotence", check_idempotence),
    ("rounding_quasi_optimality", check_quasi_optimality),
    ("arithmetic_matches_dense", check_arithmetic),
    ("quantize_roundtrip", check_quantize),
)


def _run_property(
    name: str,
    check: Callable[[RoundingCase, SpecFactory], Optional[str]],
    cases: Sequence[RoundingCase],
    make_spec: SpecFactory,
) -> PropertyResult:
    failures = 0
    counterexample: Optional[Dict[str, Any]] = None
    for case in cases:
        detail = check(case, make_spec)
        if detail is None:
            continue
        failures += 1
        if counterexample is None:
            counterexample = {**case.describe(), "detail": detail}
            logger.warning("property %s failed on case %d: %s", name, case.index, detail)
    return PropertyResult(
        name=name,
        passed=failures == 0,
        cases=len(cases),
        failures=failures,
        counterexample=counterexample,
    )


def dmrg_target(seed: int, index: int) -> Tuple[TTTensor, TTTensor]:
    """A rank-8 train plus relative noise of DMRG_NOISE (d=10, n=4), and the noise-free part."""
    rng = np.random.default_rng([seed, index, 3])
    shape = (4,) * 10
    signal = random_tt(shape, 8, rng)
    noise = random_tt(shape, 2, rng)
    weight = DMRG_NOISE * orthogonal_norm(signal) / orthogonal_norm(noise)
    return linear_combination([1.0, weight], [signal, noise]), signal


def hidden_term_target(seed: int, index: int) -> Tuple[TTTensor, TTTensor]:
    """
    A rank-2 train ``s + c h`` (d=10, n=4) and the rank-1 start ``s``.

    Every mode vector of ``h`` has overlap HIDDEN_OVERLAP with that of ``s``, so
    seen through ``s`` on all but two modes the second term weighs
    ``HIDDEN_OVERLAP ** 8``, far below the local accuracy of a split.
    """
    rng = np.random.default_rng([seed, index, 4])
    start_cores, hidden_cores = [], []
    for _ in range(10):
        s = rng.standard_normal(4)
        s /= np.linalg.norm(s)
        w = rng.standard_normal(4)
        w -= np.dot(w, s) * s
        w /= np.linalg.norm(w)
        v = HIDDEN_OVERLAP * s + math.sqrt(1.0 - HIDDEN_OVERLAP**2) * w
        start_cores.append(s.reshape(1, 4, 1))
        hidden_cores.append(v.reshape(1, 4, 1))
    start = TTTensor(tuple(start_cores))
    hidden = TTTensor(tuple(hidden_cores))
    weight = 0.5 + 0.5 * float(rng.random())
    return linear_combination([1.0, weight], [start, hidden]), start


def _boosted_problem(target: TTTensor, start: TTTensor, opts: DmrgOptions) -> Optional[str]:
    boosted = dmrg_truncate(target, start, opts)
    direct = round(target, TruncationSpec(eps=DMRG_EPS))
    if not boosted.converged or boosted.residual > DMRG_EPS * (1 + SLACK):
        return f"boosted DMRG residual {boosted.residual:.3e} above {DMRG_EPS}"
    if boosted.tensor.ranks != direct.ranks:
        return f"boosted DMRG ranks {boosted.tensor.ranks} vs SVD rounding {direct.ranks}"
    return None


def _result(name: str, problems: Sequence[Optional[str]], detail: Optional[str] = None) -> PropertyResult:
    failures = [(index, p) for index, p in enumerate(problems) if p is not None]
    counterexample = None
    if failures:
        index, problem = failures[0]
        counterexample = {"case": index, "detail": problem}
        logger.warning("property %s failed on case %d: %s", name, index, problem)
    return PropertyResult(
        name=name,
        passed=not failures,
        cases=len(problems),
        failures=len(failures),
        counterexample=counterexample,
        detail=detail,
    )


def dmrg_properties(seed: int, count: int) -> List[PropertyResult]:
    """
    Boosted DMRG matches SVD rounding; without the boost it stalls on hidden terms.

    The boosted runs cover both the noisy rank-8 targets and the hidden-term
    targets and must reach eps with exactly the ranks of SVD rounding after the
    clean-up. Plain runs on the hidden-term targets must stop above eps.
    """
    boosted_opts = DmrgOptions(eps=DMRG_EPS, rank_boost=3, final_cleanup=True)
    plain_opts = DmrgOptions(eps=DMRG_EPS, rank_boost=0, final_cleanup=False)
    boosted: List[Optional[str]] = []
    stalls: List[Optional[str]] = []
    for index in range(count):
        target, _ = dmrg_target(seed, index)
        boosted.append(_boosted_problem(target, ones(target.shape), boosted_opts))
        hidden, start = hidden_term_target(seed, index)
        boosted.append(_boosted_problem(hidden, start, boosted_opts))
        plain = dmrg_truncate(hidden, start, plain_opts)
        stalls.append(
            None
            if not plain.converged
            else f"DMRG without boost reached residual {plain.residual:.3e}, ranks {plain.tensor.ranks}"
        )
    stalled = sum(problem is None for problem in stalls)
    return [
        _result("dmrg_boost_reaches_eps", boosted),
        _result(
            "dmrg_zero_boost_stalls", stalls, detail=f"stalled above eps on {stalled} of {count} targets"
        ),
    ]


def run_proptests(cfg: ExperimentConfig) -> PropertyReport:
    """Run every property on ``cfg.cases`` generated cases and collect the report."""
    make_spec = _spec_factory(cfg.inject_fault)
    if cfg.inject_fault:
        logger.info("fault injection on: rounding thresholds inflated tenfold")
    cases = [rounding_case(cfg.seed, index) for index in range(cfg.cases)]
    report = PropertyReport(seed=cfg.seed, inject_fault=cfg.inject_fault)
    for name, check in ROUNDING_PROPERTIES:
        result = _run_property(name, check, cases, make_spec)
        logger.info("%s: %d/%d failures", name, result.failures, result.cases)
        report.properties.append(result)
    report.properties.extend(dmrg_properties(cfg.seed, min(cfg.cases, DMRG_CASES)))
    return report


def write_report(report: PropertyReport, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "report.json"
    path.write_text(report.model_dump_json(indent=2) + "\n")
    return path
