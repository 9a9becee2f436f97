"""Value and burden estimates from logged data, plus support diagnostics.

Record-level reductions go through ``math.fsum`` so the tolerance budgets in
the tests do not depend on summation order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import PolicyLibrary, TwoStagePolicy, conditional_burden_arrays, floored
from .errors import ConfigError, DataError
from .nuisance import NuisanceBundle, PropensitySource
from .simulate import LoggedDataset


def _mean(x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise DataError("empty data")
    return math.fsum(x) / x.size


def record_propensities(data: LoggedDataset, propensities, floor: float | None = None):
    """Pre-floor ``(n, K1)`` and ``(n, K1, L)`` tables on each record's context, and the floor.

    ``propensities`` is a ``NuisanceBundle``, a ``PropensitySource`` or a
    behavior ``TwoStagePolicy``; an explicit ``floor`` overrides the source's.
    """
    if isinstance(propensities, NuisanceBundle):
        propensities = propensities.propensity
    if isinstance(propensities, PropensitySource):
        if len(propensities.group) != data.n:
            raise DataError("propensity source does not cover this dataset")
        g = propensities.group
        p1 = propensities.stage1[g, data.context]
        p2 = propensities.stage2[g, data.context]
        fl = propensities.floor
    elif isinstance(propensities, TwoStagePolicy):
        p1 = propensities.stage1[data.context]
        p2 = propensities.stage2[data.context]
        fl = 0.0
    else:
        raise ConfigError("propensities must be a bundle, a propensity source or a behavior policy")
    return p1, p2, float(fl if floor is None else floor)


def _index_map(data: LoggedDataset):
    def triple(pos):
        i, g, j = (int(v) for v in pos)
        item = int(data.feasible.items[data.context[i], g, j]) if j >= 0 else -1
        return (int(data.context[i]), g, item)

    return triple


def logged_weights(data: LoggedDataset, pi: TwoStagePolicy, propensities=None, floor: float | None = None) -> np.ndarray:
    """Coupled weights ``pi1 pi2 / e`` at each logged triple.

    Without ``propensities`` the records' own ``mu1 * mu2`` are used.
    """
    pi.check(data.feasible)
    idx = (data.context, data.a1, data.slot)
    num = pi.stage1[data.context, data.a1] * pi.stage2[idx]
    if propensities is None:
        if not data.has_propensities:
            raise DataError("records carry no propensities")
        den = data.mu1 * data.mu2
        fl = 0.0 if floor is None else floor
    else:
        p1, p2, fl = record_propensities(data, propensities, floor)
        r = np.arange(data.n)
        den = p1[r, data.a1] * p2[r, data.a1, data.slot]

    def triple(pos):
        i = int(pos[0])
        return (int(data.context[i]), int(data.a1[i]), int(data.a2[i]))

    return num / floored(den, num, fl, triple)


def ips_value(
    data: LoggedDataset,
    pi: TwoStagePolicy,
    propensities=None,
    *,
    floor: float | None = None,
    self_normalized: bool = False,
) -> float:
    """``(1/n) sum w_i y_i``; the self-normalized form divides by the mean weight."""
    w = logged_weights(data, pi, propensities, floor)
    v = _mean(w * data.y)
    if self_normalized:
        mw = _mean(w)
        return v / mw if mw > 0 else 0.0
    return v


def dr_scores(data: LoggedDataset, pi: TwoStagePolicy, bundle: NuisanceBundle) -> np.ndarray:
    """Per-record ``m_qhat(x; pi) + w (y - qhat(x, a1, a2))``."""
    qhat = bundle.record_qhat(data)
    r = np.arange(data.n)
    pj = pi.stage1[data.context][..., None] * pi.stage2[data.context]
    model = np.where(data.feasible.mask[data.context], pj * qhat, 0.0).sum(axis=(1, 2))
    w = logged_weights(data, pi, bundle)
    return model + w * (data.y - qhat[r, data.a1, data.slot])


def dr_value(data: LoggedDataset, pi: TwoStagePolicy, bundle: NuisanceBundle, return_scores: bool = False):
    psi = dr_scores(data, pi, bundle)
    v = _mean(psi)
    return (v, psi) if return_scores else v


def plugin_value(data: LoggedDataset, pi: TwoStagePolicy, bundle: NuisanceBundle) -> float:
    """Pure model value ``(1/n) sum m_qhat(x_i; pi)``."""
    qhat = bundle.record_qhat(data)
    pj = pi.stage1[data.context][..., None] * pi.stage2[data.context]
    return _mean((pj * qhat).sum(axis=(1, 2)))


def conditional_record_burden(
    data: LoggedDataset, pi: TwoStagePolicy, propensities, *, floor: float | None = None, mode: str = "raw_full"
) -> np.ndarray:
    """Conditional burden at each record's context over the full feasible map."""
    pi.check(data.feasible)
    p1, p2, fl = record_propensities(data, propensities, floor)
    return conditional_burden_arrays(
        pi.stage1[data.context], pi.stage2[data.context], p1, p2,
        data.feasible.mask[data.context], fl, mode, _index_map(data),
    )


def empirical_burden(
    data: LoggedDataset, pi: TwoStagePolicy, propensities, *, floor: float | None = None, mode: str = "raw_full"
) -> float:
    """Average conditional burden over the logged contexts."""
    return _mean(conditional_record_burden(data, pi, propensities, floor=floor, mode=mode))


def casp_score(v_hat: float, b_hat: float, lam: float) -> float:
    """Penalized score ``v_hat - lam * b_hat``."""
    if lam < 0 or math.isnan(lam):
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    return v_hat - lam * b_hat


@dataclass(frozen=True)
class Diagnostics:
    ess: float
    max_weight: float
    off_support_mass: float
    generator_share: np.ndarray


def diagnostics(data: LoggedDataset, pi: TwoStagePolicy, propensities, floor: float | None = None) -> Diagnostics:
    """Effective sample size, largest weight, off-support mass and generator share.

    Off-support mass is the average ``pi`` mass on feasible pairs whose
    propensity is zero before flooring.
    """
    if data.n == 0:
        raise DataError("empty data")
    p1, p2, fl = record_propensities(data, propensities, floor)
    w = logged_weights(data, pi, propensities, fl)
    sw = math.fsum(w)
    sw2 = math.fsum(w * w)
    ess = sw * sw / sw2 if sw2 > 0 else 0.0
    mask = data.feasible.mask[data.context]
    pj = pi.stage1[data.context][..., None] * pi.stage2[data.context]
    zero = mask & ((p1[..., None] * p2) <= 0)
    off = _mean(np.where(zero, pj, 0.0).sum(axis=(1, 2)))
    share = pi.stage1[data.context].mean(axis=0)
    return Diagnostics(ess, float(w.max()), min(max(off, 0.0), 1.0), share)


@dataclass(frozen=True)
class PolicyEstimate:
    policy_id: str
    v_dr: float
    v_ips: float
    burden: float
    burden_score: float
    burden_mode: str
    ess: float
    max_weight: float
    off_support_mass: float
    generator_share: np.ndarray
    v_plugin: float = float("nan")
    scores: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return 0 if self.scores is None else len(self.scores)

    @property
    def dr_sd(self) -> float:
        if self.scores is None or len(self.scores) < 2:
            return 0.0
        return float(np.std(self.scores, ddof=1))

    def j(self, lam: float) -> float:
        return casp_score(self.v_dr, self.burden_score, lam)


def estimate_policy(
    data: LoggedDataset, pi: TwoStagePolicy, bundle: NuisanceBundle, burden_mode: str = "normalized_full"
) -> PolicyEstimate:
    v_dr, psi = dr_value(data, pi, bundle, return_scores=True)
    raw = empirical_burden(data, pi, bundle, mode="raw_full")
    score = raw if burden_mode == "raw_full" else empirical_burden(data, pi, bundle, mode=burden_mode)
    d = diagnostics(data, pi, bundle)
    return PolicyEstimate(
        policy_id=pi.id,
        v_dr=v_dr,
        v_ips=ips_value(data, pi, bundle),
        burden=raw,
        burden_score=score,
        burden_mode=burden_mode,
        ess=d.ess,
        max_weight=d.max_weight,
        off_support_mass=d.off_support_mass,
        generator_share=d.generator_share,
        v_plugin=plugin_value(data, pi, bundle),
        scores=psi,
    )


def estimate_policies(
    data: LoggedDataset, library: PolicyLibrary, bundle: NuisanceBundle, burden_mode: str = "normalized_full"
) -> list[PolicyEstimate]:
    return [estimate_policy(data, pi, bundle, burden_mode) for pi in library]


def rescore_burden(
    estimates, data: LoggedDataset, library: PolicyLibrary, bundle: NuisanceBundle, burden_mode: str
) -> list[PolicyEstimate]:
    """Same estimates with ``burden_score`` recomputed under another burden mode."""
    out = []
    for e, pi in zip(estimates, library):
        if e.policy_id != pi.id:
            raise ConfigError("estimates and library are out of order")
        score = e.burden if burden_mode == "raw_full" else empirical_burden(data, pi, bundle, mode=burden_mode)
        out.append(replace(e, burden_score=score, burden_mode=burden_mode))
    return out


def write_estimates_csv(estimates, path, lambdas=(0.0, 0.05)) -> None:
    """One row per policy; ``j_lambda_<lam>`` uses each estimate's burden score."""
    lambdas = tuple(lambdas)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy_id", "v_dr", "v_ips", "burden", "ess", "max_w", "off_support_mass"]
                   + [f"j_lambda_{lam:g}" for lam in lambdas])
        for e in estimates:
            w.writerow([e.policy_id, repr(e.v_dr), repr(e.v_ips), repr(e.burden), repr(e.ess),
                        repr(e.max_weight), repr(e.off_support_mass)] + [repr(e.j(lam)) for lam in lambdas])
