"""The admissible cone {kappa : sum arctan kappa_i >= sigma} and its structure.

Covers membership and structural property checks, a seeded rejection
sampler, finite-difference concavity probes of G = -exp(-A F) over
symmetric matrix directions, and numerical calibration of A.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationFailed, LeftCone, NotSorted, SamplerStalled, ValidationError
from .geometry import OperatorParams, phase_F
from .smalldense import jacobi_eigh

PROPERTY_TOL = 1e-12
CONCAVITY_TOL = 1e-8
FD_STEP = 1e-4
PROBE_MIN_MARGIN = 1e-6
A_RANGE = (1.0, 1e4)


def cone_threshold(n, delta):
    return (n - 2) * np.pi / 2 + delta


def _check_delta(delta):
    if not 0.0 < delta < np.pi / 2:
        raise ValidationError(f"delta={delta!r} must lie in (0, pi/2)")


@dataclass
class ConeReport:
    admissible: bool
    margin: float
    props: tuple  # (i), (ii), (iii), (iv), (v)
    worst_violation: float


def cone_property_violations(kappa, delta):
    """Signed violation amounts of the five structural properties.

    ``kappa`` has shape ``(..., n)`` sorted descending. Returns an array of
    shape ``(..., 5)``; a property holds when its entry is <= the tolerance.
    Property (v) is probed pointwise through its symmetric consequence: the
    permutation average (mean, ..., mean) of an admissible point is admissible.
    """
    kappa = np.asarray(kappa, dtype=float)
    n = kappa.shape[-1]
    sigma = cone_threshold(n, delta)
    kn = kappa[..., -1]
    kn1 = kappa[..., -2]
    v1 = np.maximum(-kn1, np.abs(kn) - kn1)
    v2 = -np.sum(kappa, axis=-1)
    v3 = -1.0 / np.tan(delta) - kn
    with np.errstate(divide="ignore"):
        inv_sum = np.sum(1.0 / kappa, axis=-1)
    v4 = np.where(kn < 0.0, inv_sum + np.tan(delta), -np.inf)
    v5 = sigma - n * np.arctan(np.mean(kappa, axis=-1))
    return np.stack([v1, v2, v3, v4, v5], axis=-1)


def check_cone_properties(kappa, delta) -> ConeReport:
    _check_delta(delta)
    kappa = np.asarray(kappa, dtype=float)
    if kappa.ndim != 1 or kappa.size < 2:
        raise ValueError("kappa must be a vector of length >= 2")
    if np.any(np.diff(kappa) > 0.0):
        raise NotSorted(f"kappa must be sorted descending, got {kappa.tolist()}")
    margin = float(phase_F(kappa) - cone_threshold(kappa.size, delta))
    viol = cone_property_violations(kappa, delta)
    props = tuple(bool(v <= PROPERTY_TOL) for v in viol)
    return ConeReport(
        admissible=margin >= 0.0,
        margin=margin,
        props=props,
        worst_violation=float(np.max(viol)),
    )


def sample_admissible(n, delta, count, seed, batch=65536):
    """Rejection-sample ``count`` admissible curvature vectors, sorted descending.

    Proposal: magnitudes log-uniform on [1e-3, 1e3], the smallest component
    negated with probability 1/2.
    """
    _check_delta(delta)
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    sigma = cone_threshold(n, delta)
    accepted = []
    n_accepted = 0
    draws = 0
    while n_accepted < count:
        mags = 10.0 ** rng.uniform(-3.0, 3.0, size=(batch, n))
        flip = rng.random(batch) < 0.5
        smallest = np.argmin(mags, axis=1)
        mags[np.arange(batch), smallest] *= np.where(flip, -1.0, 1.0)
        kappa = -np.sort(-mags, axis=1)
        keep = kappa[phase_F(kappa) >= sigma]
        accepted.append(keep)
        n_accepted += len(keep)
        draws += batch
        if draws >= 1_000_000 and n_accepted < 1e-4 * draws:
            raise SamplerStalled(
                f"acceptance rate {n_accepted / draws:.2e} after {draws} draws "
                f"(n={n}, delta={delta})"
            )
    return np.concatenate(accepted)[:count]


def random_unit_directions(rng, shape, n):
    """Random symmetric matrices with max-abs entry 1."""
    m = rng.standard_normal(tuple(shape) + (n, n))
    m = np.triu(m) + np.swapaxes(np.triu(m, 1), -1, -2)
    return m / np.max(np.abs(m), axis=(-2, -1), keepdims=True)


def _arctan_increment(new, old):
    """arctan(new) - arctan(old) without cancellation for nearby arguments."""
    den = 1.0 + new * old
    safe = den > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        close = np.arctan((new - old) / np.where(safe, den, 1.0))
    return np.where(safe, close, np.arctan(new) - np.arctan(old))


def phase_increments(kappa, directions, eps=FD_STEP):
    """F(diag(kappa) +- eps M) - F(diag(kappa)) for a batch of points/directions.

    ``kappa``: ``(m, n)`` descending; ``directions``: ``(m, k, n, n)``.
    Returns ``(plus, minus, margin_plus, margin_minus)`` each ``(m, k)``; the
    margins are the perturbed phases themselves so callers can test cone
    membership.
    """
    kappa = np.asarray(kappa, dtype=float)
    m, k = directions.shape[:2]
    base = np.zeros(directions.shape)
    idx = np.arange(kappa.shape[1])
    base[..., idx, idx] = kappa[:, None, :]
    out = []
    for sign in (1.0, -1.0):
        vals, _ = jacobi_eigh(base + sign * eps * directions)
        out.append(np.sum(_arctan_increment(vals, kappa[:, None, :]), axis=-1))
    f0 = phase_F(kappa)[:, None]
    return out[0], out[1], f0 + out[0], f0 + out[1]


def second_difference(f0, d_plus, d_minus, a_param, eps=FD_STEP):
    """[G(+) - 2G(0) + G(-)] / eps^2 from phase increments, with G = -exp(-A F).

    Written as -exp(-A F0) (expm1(-A d+) + expm1(-A d-)) / eps^2, which is the
    same quantity without the cancellation of the naive three-point form.
    """
    return (
        -np.exp(-a_param * f0)
        * (np.expm1(-a_param * d_plus) + np.expm1(-a_param * d_minus))
        / eps**2
    )


def hessian_G_sampled(kappa, params: OperatorParams, direction, eps=FD_STEP):
    kappa = np.asarray(kappa, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if not np.isclose(np.max(np.abs(direction)), 1.0, rtol=1e-12, atol=0.0):
        raise ValueError("direction must have max-abs entry 1")
    f0 = float(phase_F(kappa))
    if f0 - params.sigma <= PROBE_MIN_MARGIN:
        raise LeftCone(f"base point margin {f0 - params.sigma:.3e} too small")
    kap = -np.sort(-kappa)[None, :]
    dp, dm, fp, fm = phase_increments(kap, direction[None, None], eps)
    if fp[0, 0] < params.sigma or fm[0, 0] < params.sigma:
        raise LeftCone("perturbed matrix leaves the admissible cone")
    return float(second_difference(f0, dp[0, 0], dm[0, 0], params.a_param, eps))


@dataclass
class CalibrationResult:
    a_param: float
    samples_tested: int
    max_hess_eigenvalue: float
    bracket: tuple = field(default=(None, None))


class ConcavityProbe:
    """Precomputed phase increments for a fixed sample, reusable for any A."""

    def __init__(self, kappa, directions, sigma, eps=FD_STEP):
        f0 = phase_F(kappa)
        keep = f0 - sigma > PROBE_MIN_MARGIN
        kappa, directions = kappa[keep], directions[keep]
        dp, dm, fp, fm = phase_increments(kappa, directions, eps)
        inside = np.all((fp >= sigma) & (fm >= sigma), axis=1)
        self.kappa = kappa[inside]
        self.f0 = phase_F(self.kappa)[:, None]
        self.d_plus = dp[inside]
        self.d_minus = dm[inside]
        self.eps = eps

    def __len__(self):
        return len(self.kappa)

    def quotients(self, a_param):
        return second_difference(self.f0, self.d_plus, self.d_minus, a_param, self.eps)

    def max_quotient(self, a_param):
        return float(np.max(self.quotients(a_param)))


def build_probe(n, delta, sample_count, seed, directions_per_point=10):
    rng = np.random.default_rng([seed, 1])
    kappa = sample_admissible(n, delta, sample_count, seed)
    directions = random_unit_directions(rng, (len(kappa), directions_per_point), n)
    return ConcavityProbe(kappa, directions, cone_threshold(n, delta))


def calibrate_A(n, delta, sample_count=1000, seed=0, rel_tol=1e-3) -> CalibrationResult:
    """Smallest tested A in [1, 1e4] at which every sampled quotient is <= 1e-8.

    Geometric bisection; assumes sampled concavity is monotone in A.
    """
    _check_delta(delta)
    if sample_count < 1000:
        raise ValueError("sample_count must be >= 1000")
    probe = build_probe(n, delta, sample_count, seed)
    lo, hi = A_RANGE
    if probe.max_quotient(hi) > CONCAVITY_TOL:
        raise CalibrationFailed(f"sampled concavity fails even at A={hi:g}")
    if probe.max_quotient(lo) <= CONCAVITY_TOL:
        hi = lo
    else:
        while hi / lo > 1.0 + rel_tol:
            mid = np.sqrt(lo * hi)
            if probe.max_quotient(mid) <= CONCAVITY_TOL:
                hi = mid
            else:
                lo = mid
    return CalibrationResult(
        a_param=float(hi),
        samples_tested=len(probe),
        max_hess_eigenvalue=probe.max_quotient(hi),
        bracket=(float(lo), float(hi)),
    )


def inequality_probes(kappa, a_param):
    """Empirical extremes of the derivative inequalities of G over a sample.

    Returns a dict with
      ``min_weighted_sum``: min of sum kappa_i dG/dkappa_i (bounded below),
      ``max_norm_ratio``:   max of |kappa|^2 sum G_i / sum G_i kappa_i^2 (bounded above),
      ``min_last_derivative``: min of dG/dkappa_n (strictly positive).
    The ratio is independent of the common factor A exp(-A F), so it is
    evaluated without it to avoid underflow.
    """
    kappa = np.asarray(kappa, dtype=float)
    scale = a_param * np.exp(-a_param * phase_F(kappa))
    lorentz = 1.0 / (1.0 + kappa**2)
    weighted = scale * np.sum(kappa * lorentz, axis=-1)
    ratio = np.sum(kappa**2, axis=-1) * np.sum(lorentz, axis=-1) / np.sum(
        kappa**2 * lorentz, axis=-1
    )
    last = scale * lorentz[..., -1]
    return {
        "min_weighted_sum": float(np.min(weighted)),
        "max_norm_ratio": float(np.max(ratio)),
        "min_last_derivative": float(np.min(last)),
    }


def convexity_violations(kappa_a, kappa_b, delta, ts=(0.25, 0.5, 0.75)):
    """Max over t of sigma - F(t a + (1-t) b) for each pair (positive = violation)."""
    n = kappa_a.shape[-1]
    sigma = cone_threshold(n, delta)
    worst = np.full(kappa_a.shape[:-1], -np.inf)
    for t in ts:
        worst = np.maximum(worst, sigma - phase_F(t * kappa_a + (1.0 - t) * kappa_b))
    return worst
