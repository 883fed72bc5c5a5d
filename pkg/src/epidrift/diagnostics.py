"""Convergence diagnostics: rank-normalized split R-hat and effective sample size.

Chains are split in half, pooled draws are rank-normalized through the normal
quantile function, and the potential scale reduction factor is taken as the
worse of the location (bulk) and scale (folded) statistics. Effective sample
sizes use per-chain autocorrelations combined across chains and truncated by
Geyer's initial monotone sequence.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from scipy import stats

from .validation import ValidationError


def _split_chains(chains: np.ndarray) -> np.ndarray:
    """(m, n) -> (2m, n//2); a trailing odd draw is dropped."""
    m, n = chains.shape
    half = n // 2
    return np.concatenate([chains[:, :half], chains[:, n - half :]], axis=0)


def _rank_normalize(chains: np.ndarray) -> np.ndarray:
    """Map pooled draws to normal scores via fractional ranks."""
    flat = chains.reshape(-1)
    ranks = stats.rankdata(flat, method="average")
    z = stats.norm.ppf((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(chains.shape)


def _rhat_basic(chains: np.ndarray) -> float:
    m, n = chains.shape
    if m < 2 or n < 2:
        return np.nan
    chain_means = chains.mean(axis=1)
    within = float(np.mean(np.var(chains, axis=1, ddof=1)))
    between_over_n = float(np.var(chain_means, ddof=1))
    if within == 0.0:
        return np.nan
    var_plus = (n - 1) / n * within + between_over_n
    return float(np.sqrt(var_plus / within))


def split_rhat(chains: np.ndarray) -> float:
    """Rank-normalized split R-hat (max of bulk and folded statistics).

    ``chains`` has shape (m, n); returns NaN for a single chain or constant
    draws (undefined-flagged rather than raised).
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2:
        raise ValidationError("chains must be a (chains, draws) array")
    if chains.shape[0] < 2:
        return np.nan
    if np.all(chains == chains.reshape(-1)[0]):
        return np.nan
    bulk = _rhat_basic(_split_chains(_rank_normalize(chains)))
    folded = np.abs(chains - np.median(chains))
    scale = _rhat_basic(_split_chains(_rank_normalize(folded)))
    return float(max(bulk, scale))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of one chain via FFT."""
    n = x.size
    centered = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conjugate(f))[:n].real
    return acov / n


def _ess_from_chains(chains: np.ndarray) -> float:
    """Effective sample size of the mean estimator over (possibly split) chains."""
    m, n = chains.shape
    if n < 4:
        return np.nan
    acov = np.stack([_autocovariance(chains[i]) for i in range(m)])
    chain_var = acov[:, 0] * n / (n - 1)
    within = float(np.mean(chain_var))
    mean_acov = acov.mean(axis=0)
    if within == 0.0:
        return np.nan
    var_plus = within * (n - 1) / n
    if m > 1:
        var_plus += float(np.var(chains.mean(axis=1), ddof=1))
    rho = 1.0 - (within - mean_acov) / var_plus
    rho[0] = 1.0

    # Geyer initial positive + monotone sequence over lag pairs
    pair_sums: list[float] = []
    prev = np.inf
    for k in range((n - 1) // 2 + 1):
        s = rho[2 * k] + (rho[2 * k + 1] if 2 * k + 1 < n else 0.0)
        if k > 0 and s < 0:
            break
        pair_sums.append(min(s, prev))
        prev = pair_sums[-1]
    tau = max(-1.0 + 2.0 * float(np.sum(pair_sums)), 1e-12)
    return float(m * n / tau)


def ess_bulk(chains: np.ndarray) -> float:
    """Bulk effective sample size on rank-normalized split chains."""
    chains = np.asarray(chains, dtype=float)
    if np.all(chains == chains.reshape(-1)[0]):
        return np.nan
    return _ess_from_chains(_split_chains(_rank_normalize(chains)))


def ess_tail(chains: np.ndarray) -> float:
    """Tail effective sample size: worst ESS of the 5% and 95% quantile indicators."""
    chains = np.asarray(chains, dtype=float)
    if np.all(chains == chains.reshape(-1)[0]):
        return np.nan
    out = []
    for q in (0.05, 0.95):
        indicator = (chains <= np.quantile(chains, q)).astype(float)
        out.append(_ess_from_chains(_split_chains(indicator)))
    return float(np.nanmin(out))


def diagnostics_table(draws: np.ndarray, names: list[str] | None = None) -> pd.DataFrame:
    """Per-coordinate R-hat and bulk/tail ESS.

    ``draws`` has shape (chains, iterations, coordinates); at least 4 draws
    per chain are required. With a single chain, R-hat is reported as NaN and
    the effective sample sizes are still computed.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 3:
        raise ValidationError("draws must be (chains, iterations, coordinates)")
    m, n, dim = draws.shape
    if m < 1 or n < 4:
        raise ValidationError("need at least one chain with four draws")
    if names is not None and len(names) != dim:
        raise ValidationError(f"{dim} coordinates but {len(names)} names")
    records = []
    for j in range(dim):
        block = draws[:, :, j]
        records.append(
            {
                "rhat": split_rhat(block),
                "ess_bulk": ess_bulk(block),
                "ess_tail": ess_tail(block),
            }
        )
    index = names if names is not None else [f"theta[{j}]" for j in range(dim)]
    return pd.DataFrame(records, index=index)
