"""Sample-quality metrics.

Square-root base-2 Jensen-Shannon distance between binned distributions,
constraint-violation statistics (mean |h| and mean g+), and power-trace
histograms tr(X^k) for rotation-group samples. Everything here is pure and
deterministic so that a saved report can be reproduced exactly from the
sample files.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

_BINNINGS = ("spherical_theta_phi", "power_trace", "coordinate")
_SPHERICAL_RANGES = ((0.0, float(np.pi)), (0.0, float(2.0 * np.pi)))


@dataclass(frozen=True)
class HistogramSpec:
    """Binning recipe: axis bin counts plus per-axis value ranges."""

    binning: str
    bins: tuple
    ranges: tuple

    def __post_init__(self):
        if self.binning not in _BINNINGS:
            raise ValueError(f"binning must be one of {_BINNINGS}")
        bins = tuple(int(b) for b in self.bins)
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        if len(bins) != len(ranges):
            raise ValueError("bins and ranges must have matching lengths")
        if any(b < 2 for b in bins):
            raise ValueError("every axis needs at least 2 bins")
        if any(hi <= lo for lo, hi in ranges):
            raise ValueError("every range needs hi > lo")
        if self.binning == "spherical_theta_phi" and ranges != _SPHERICAL_RANGES:
            raise ValueError("spherical binning must cover [0, pi] x [0, 2 pi)")
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "ranges", ranges)


@dataclass
class Histogram:
    counts: np.ndarray          # flat, length prod(bins)
    spec: HistogramSpec


def spherical_spec(n_theta: int = 20, n_phi: int = 40) -> HistogramSpec:
    return HistogramSpec("spherical_theta_phi", (n_theta, n_phi), _SPHERICAL_RANGES)


def spherical_histogram(x: np.ndarray, spec: Optional[HistogramSpec] = None) -> Histogram:
    """Bin points on S^2 by colatitude theta = arccos(z) and azimuth phi."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != 3:
        raise ValueError("spherical histograms need points in R^3")
    if spec is None:
        spec = spherical_spec()
    if spec.binning != "spherical_theta_phi":
        raise ValueError("spec.binning must be 'spherical_theta_phi'")
    theta = np.arccos(np.clip(x[:, 2], -1.0, 1.0))
    phi = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2.0 * np.pi)
    counts, _, _ = np.histogram2d(theta, phi, bins=spec.bins, range=spec.ranges)
    return Histogram(counts.ravel(), spec)


def coordinate_histogram(x: np.ndarray, spec: HistogramSpec) -> Histogram:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if spec.binning != "coordinate":
        raise ValueError("spec.binning must be 'coordinate'")
    if x.shape[1] != len(spec.bins):
        raise ValueError("point dimension does not match the spec axes")
    counts, _ = np.histogramdd(x, bins=spec.bins, range=spec.ranges)
    return Histogram(counts.ravel(), spec)


def _counts_of(h) -> np.ndarray:
    if isinstance(h, Histogram):
        return np.asarray(h.counts, dtype=float).ravel()
    return np.asarray(h, dtype=float).ravel()


def jsd_histograms(P, Q) -> float:
    """Square root of the base-2 Jensen-Shannon divergence, a metric in [0, 1].

    Accepts Histogram objects (binning must match exactly) or raw count
    arrays (shapes must match). Empty bins follow 0 log 0 = 0.
    """
    if isinstance(P, Histogram) != isinstance(Q, Histogram):
        raise ValueError("cannot mix Histogram and raw-array inputs")
    if isinstance(P, Histogram) and P.spec != Q.spec:
        raise ValueError("histogram binning mismatch")
    p = _counts_of(P)
    q = _counts_of(Q)
    if p.shape != q.shape:
        raise ValueError("histogram shapes differ")
    if p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("histograms must carry positive total mass")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("negative bin counts")
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)

    def kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * np.log2(a[mask] / b[mask])))

    js = 0.5 * kl(p, m) + 0.5 * kl(q, m)
    return float(np.sqrt(min(max(js, 0.0), 1.0)))


def _eval_rows(fn, samples, m):
    try:
        out = np.asarray(fn(samples), dtype=float)
        if out.shape == (len(samples), m):
            return out
    except Exception:
        pass
    return np.stack([np.atleast_1d(np.asarray(fn(s), dtype=float)) for s in samples])


def violation_stats(cs, samples) -> tuple:
    """(mean |h| per component, mean g+ per component) over the samples.

    Either statistic is 0.0 when the corresponding constraint block is
    empty.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    avg_abs_h = 0.0
    avg_g_plus = 0.0
    if cs.n_eq > 0:
        H = _eval_rows(cs.h, samples, cs.n_eq)
        avg_abs_h = float(np.mean(np.abs(H)))
    if cs.n_ineq > 0:
        G = _eval_rows(cs.g, samples, cs.n_ineq)
        avg_g_plus = float(np.mean(np.maximum(G, 0.0)))
    return avg_abs_h, avg_g_plus


def _as_square_batch(samples) -> np.ndarray:
    X = np.asarray(samples, dtype=float)
    if X.ndim == 2:
        n = int(round(np.sqrt(X.shape[1])))
        if n * n != X.shape[1]:
            raise ValueError("flattened samples are not square matrices")
        X = X.reshape(X.shape[0], n, n)
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ValueError("need a batch of square matrices")
    return X


def matrix_power_traces(samples, powers) -> dict:
    """tr(X^k) per sample for each requested power k >= 1."""
    X = _as_square_batch(samples)
    powers = tuple(int(k) for k in powers)
    if any(k < 1 for k in powers):
        raise ValueError("powers must be positive integers")
    out = {}
    acc = X
    for k in range(1, max(powers) + 1):
        if k > 1:
            acc = acc @ X
        if k in powers:
            out[k] = np.einsum("bii->b", acc).copy()
    return out


def power_trace_stats(samples, powers=(1, 2, 4, 5), bins: int = 64,
                      value_range=None) -> dict:
    """Per-power histogram of tr(X^k) over a batch of rotation matrices.

    value_range: None uses the observed range per power; a (lo, hi) pair
    applies to every power; a dict maps power -> (lo, hi). Pass a shared
    range when two sample sets must land on identical bin edges.
    """
    traces = matrix_power_traces(samples, powers)
    out = {}
    for k, tr in traces.items():
        if isinstance(value_range, dict):
            rng_k = value_range[k]
        else:
            rng_k = value_range
        if rng_k is None:
            lo, hi = float(np.min(tr)), float(np.max(tr))
            if hi <= lo:
                lo, hi = lo - 0.5, hi + 0.5
        else:
            lo, hi = float(rng_k[0]), float(rng_k[1])
        spec = HistogramSpec("power_trace", (bins,), ((lo, hi),))
        counts, _ = np.histogram(np.clip(tr, lo, hi), bins=bins, range=(lo, hi))
        out[k] = Histogram(counts.astype(float), spec)
    return out


# ---------------------------------------------------------------------------
# aggregate report
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    jsd: float
    avg_abs_h: float
    avg_g_plus: float
    n_samples: int
    failures: int
    histograms: dict            # name -> Histogram

    def to_dict(self) -> dict:
        hists = {}
        for name, h in self.histograms.items():
            hists[name] = {
                "binning": h.spec.binning,
                "bins": list(h.spec.bins),
                "ranges": [list(r) for r in h.spec.ranges],
                "counts": [float(c) for c in h.counts],
            }
        return {
            "jsd": float(self.jsd),
            "avg_abs_h": float(self.avg_abs_h),
            "avg_g_plus": float(self.avg_g_plus),
            "n_samples": int(self.n_samples),
            "failures": int(self.failures),
            "histograms": hists,
        }


def _union_range(a, b):
    lo = float(min(np.min(a), np.min(b)))
    hi = float(max(np.max(a), np.max(b)))
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def evaluate_samples(cs, samples, reference, recipe: str = "spherical_histogram",
                     spec: Optional[HistogramSpec] = None, powers=(1, 2),
                     failures: int = 0, bins=None) -> EvalReport:
    """Build an EvalReport: JSD of samples against reference plus violations.

    recipe selects the binning family; power_trace and coordinate recipes
    derive a shared value range from the union of both sample sets so the
    two histograms always sit on identical edges. bins overrides the default
    bin counts when no explicit spec is given (first entry only for the
    power_trace recipe).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if reference is None:
        raise ValueError("reference samples are required for the JSD")
    reference = np.atleast_2d(np.asarray(reference, dtype=float))

    avg_abs_h, avg_g_plus = violation_stats(cs, samples)
    hists = {}
    if recipe == "spherical_histogram":
        if spec is None:
            spec = spherical_spec(*(bins if bins else (20, 40)))
        hs = spherical_histogram(samples, spec)
        hr = spherical_histogram(reference, hs.spec)
        jsd = jsd_histograms(hs, hr)
        hists["sample"] = hs
        hists["reference"] = hr
    elif recipe == "power_trace":
        n_bins = int(bins[0]) if bins else 64
        tr_s = matrix_power_traces(samples, powers)
        tr_r = matrix_power_traces(reference, powers)
        shared = {k: _union_range(tr_s[k], tr_r[k]) for k in tr_s}
        hs = power_trace_stats(samples, powers, bins=n_bins, value_range=shared)
        hr = power_trace_stats(reference, powers, bins=n_bins, value_range=shared)
        per_k = []
        for k in hs:
            per_k.append(jsd_histograms(hs[k], hr[k]))
            hists[f"sample_k{k}"] = hs[k]
            hists[f"reference_k{k}"] = hr[k]
        jsd = float(max(per_k))
    elif recipe == "coordinate":
        if spec is None:
            d = samples.shape[1]
            counts = tuple(int(b) for b in bins) if bins else (20,) * d
            if len(counts) != d:
                counts = (counts[0],) * d
            ranges = tuple(_union_range(samples[:, i], reference[:, i])
                           for i in range(d))
            spec = HistogramSpec("coordinate", counts, ranges)
        hs = coordinate_histogram(samples, spec)
        hr = coordinate_histogram(reference, spec)
        jsd = jsd_histograms(hs, hr)
        hists["sample"] = hs
        hists["reference"] = hr
    else:
        raise ValueError(f"unknown metric recipe {recipe!r}")

    return EvalReport(jsd=jsd, avg_abs_h=avg_abs_h, avg_g_plus=avg_g_plus,
                      n_samples=len(samples), failures=int(failures),
                      histograms=hists)
