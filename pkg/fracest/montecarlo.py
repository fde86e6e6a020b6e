"""
Seeded Monte-Carlo engine.

Replications are cut into fixed-size blocks. Block b draws from a Philox
stream keyed by (seed, b), so a report depends on the seed and the
replication count only, never on how many workers ran the blocks.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from fracest.errors import InvalidInputError, NumericalError, ReplicationError
from fracest.schemas import KsResult, McReport, SlopeFit

log = logging.getLogger(__name__)

BLOCK_SIZE = 500
KS_MIN_SIZE = 100
RETRY_KEY = 1
RETRYABLE = (NumericalError, ArithmeticError, np.linalg.LinAlgError)


def make_rng(seed, *counter):
    """Philox generator for the sub-stream `counter` of `seed`."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(c) for c in counter))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Streaming moments
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Moments:
    """Count, mean and centred sum of squares per column."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_values(cls, values):
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        mean = v.mean(axis=0)
        return cls(v.shape[0], mean, ((v - mean) ** 2).sum(axis=0))

    def merge(self, other):
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / n)
        return Moments(n, mean, m2)

    @property
    def variance(self):
        if self.count < 2:
            return None
        return self.m2 / (self.count - 1)

    @property
    def stderr(self):
        var = self.variance
        return None if var is None else np.sqrt(var / self.count)


# ---------------------------------------------------------------------------
# Replication driver
# ---------------------------------------------------------------------------

def _blocks(reps, block_size):
    return [(b, min(block_size, reps - b * block_size)) for b in range(math.ceil(reps / block_size))]


def replicate(statistic, cfg, ctx=None, block_size=BLOCK_SIZE, stream=()):
    """
    Run `statistic(rng, size, ctx)` over cfg.reps replications.

    `stream` prefixes every block key, so an auxiliary simulation under
    the same seed never reuses the data streams.

    Returns (values, moments, retries); values has one row per
    replication. A failing block is retried once on the stream
    (seed, block, 1) before a ReplicationError is raised.
    """
    retries = []

    def run_block(block):
        b, size = block
        try:
            out = statistic(make_rng(cfg.seed, *stream, b), size, ctx)
        except RETRYABLE as exc:
            log.warning("block %d failed (%s); retrying on a fresh stream", b, exc)
            retries.append(b)
            try:
                out = statistic(make_rng(cfg.seed, *stream, b, RETRY_KEY), size, ctx)
            except RETRYABLE as exc2:
                raise ReplicationError("block {} failed twice: {}".format(b, exc2)) from exc2
        out = np.asarray(out, dtype=float)
        return out.reshape(size, -1)

    blocks = _blocks(cfg.reps, block_size)
    if cfg.workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(run_block, blocks))
    else:
        parts = [run_block(blk) for blk in blocks]

    moments = Moments(0, None, None)
    for part in parts:
        moments = moments.merge(Moments.from_values(part))
    return np.concatenate(parts, axis=0), moments, len(retries)


def summarize(experiment, statistic, cells, cfg, moments, retries=0, values=None):
    """Assemble the aggregate part of an McReport."""
    var = moments.variance
    se = moments.stderr
    k = len(cells)
    return McReport(
        experiment=experiment,
        statistic=statistic,
        cells=list(cells),
        reps=cfg.reps,
        seed=cfg.seed,
        mean=[float(m) for m in moments.mean],
        variance=[None] * k if var is None else [float(v) for v in var],
        stderr=[None] * k if se is None else [float(s) for s in se],
        stderr_undefined=var is None,
        values=None if values is None else [float(v) for v in np.ravel(values)],
        retries=retries,
    )


def run_replications(descriptor, cfg, params=None, keep_values=False):
    """
    Run a registered experiment and return its McReport.

    Args:
        descriptor: experiment name or Experiment instance
        cfg: McConfig
        params: experiment parameter overrides
        keep_values: include per-replication values in the report
    """
    from fracest.experiments import get_experiment

    exp = get_experiment(descriptor) if isinstance(descriptor, str) else descriptor
    return exp.run(cfg, params or {}, keep_values=keep_values)


# ---------------------------------------------------------------------------
# Tests and fits
# ---------------------------------------------------------------------------

def ks_test_normal(values):
    """One-sample Kolmogorov-Smirnov test against N(0, 1)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise InvalidInputError("KS test needs at least one value")
    low_power = v.size < KS_MIN_SIZE
    if low_power:
        log.warning("KS test on %d values (< %d): low power", v.size, KS_MIN_SIZE)
    res = stats.kstest(v, "norm")
    return KsResult(statistic=float(res.statistic), pvalue=float(np.clip(res.pvalue, 0.0, 1.0)),
                    size=int(v.size), low_power=low_power)


def ks_test_two_sample(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidInputError("two-sample KS test needs non-empty samples")
    low_power = min(a.size, b.size) < KS_MIN_SIZE
    res = stats.ks_2samp(a, b)
    return KsResult(statistic=float(res.statistic), pvalue=float(np.clip(res.pvalue, 0.0, 1.0)),
                    size=int(min(a.size, b.size)), low_power=low_power)


def slope_fit(xs, ys, level=0.95):
    """Least-squares slope with a normal-theory (Student t) interval."""
    xs = np.asarray(xs, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if xs.size != ys.size:
        raise InvalidInputError("slope fit needs equally many x and y values")
    if xs.size < 2:
        raise InvalidInputError("slope fit needs at least two points")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise InvalidInputError("slope fit needs finite data")
    if np.ptp(xs) == 0:
        raise InvalidInputError("slope fit needs distinct x values")
    fit = stats.linregress(xs, ys)
    half = 0.0
    if xs.size > 2:
        half = float(stats.t.ppf(0.5 * (1.0 + level), xs.size - 2) * fit.stderr)
    r2 = float(fit.rvalue ** 2) if np.isfinite(fit.rvalue) else None
    return SlopeFit(slope=float(fit.slope), intercept=float(fit.intercept),
                    ci_low=float(fit.slope) - half, ci_high=float(fit.slope) + half,
                    r_squared=r2, points=int(xs.size))
