"""
Convergence diagnostics for a single MCMC chain.

The CSV outputs are the authoritative numbers; the HTML trace plot is for viewing.
"""

import json
import logging
import os

import numpy as np
import pandas as pd

from posterior import Chain

logger = logging.getLogger(__name__)

MIN_DRAWS = 100


def trace_frame(chain: Chain):
    """One row per retained draw: iter, log_posterior, parameters"""
    df = pd.DataFrame(chain.samples, columns=chain.names)
    df.insert(0, 'log_posterior', chain.log_posterior)
    df.insert(0, 'iter', np.arange(chain.burn_in, chain.burn_in + len(chain)))
    return df


def lag1_autocorrelation(x):
    """Lag-1 autocorrelation; NaN for a chain without variance"""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float('nan')
    centered = x - x.mean()
    denom = np.dot(centered, centered)
    if denom <= 0.0:
        return float('nan')
    return float(np.dot(centered[:-1], centered[1:]) / denom)


def split_rhat(x):
    """
    Potential scale reduction of one chain split into two halves.

    Returns NaN when the halves have no within-chain variance.
    """
    x = np.asarray(x, dtype=float)
    n = x.size // 2
    if n < 2:
        return float('nan')
    halves = np.stack([x[:n], x[x.size - n:]])
    within = halves.var(axis=1, ddof=1).mean()
    if within <= 0.0:
        return float('nan')
    between = n * halves.mean(axis=1).var(ddof=1)
    pooled = (n - 1) / n * within + between / n
    return float(np.sqrt(pooled / within))


def credible_intervals(chain: Chain, level=0.9):
    """Equal-tailed credible intervals per parameter"""
    if not 0.0 < level < 1.0:
        raise ValueError(f"Credible level must lie in (0, 1), got {level}")
    tail = 0.5 * (1.0 - level)
    rows = []
    for k, name in enumerate(chain.names):
        column = chain.samples[:, k]
        lower, upper = np.quantile(column, [tail, 1.0 - tail])
        rows.append({'parameter': name, 'mean': float(column.mean()),
                     'lower': float(lower), 'upper': float(upper)})
    return pd.DataFrame(rows, columns=['parameter', 'mean', 'lower', 'upper'])


def diagnose(chain: Chain):
    """
    Per-parameter summary.

    Returns:
        DataFrame with parameter, mean, sd, lag1_autocorr, autocorr_undefined, split_rhat
    """
    if len(chain) < MIN_DRAWS:
        logger.warning(f"Only {len(chain)} draws; diagnostics need at least {MIN_DRAWS} to be meaningful")
    rows = []
    for k, name in enumerate(chain.names):
        column = chain.samples[:, k]
        rho = lag1_autocorrelation(column)
        rows.append({
            'parameter': name,
            'mean': float(column.mean()) if column.size else float('nan'),
            'sd': float(column.std(ddof=1)) if column.size > 1 else float('nan'),
            'lag1_autocorr': rho,
            'autocorr_undefined': bool(np.isnan(rho)),
            'split_rhat': split_rhat(column),
        })
    report = pd.DataFrame(rows)
    fixed = report.loc[report['autocorr_undefined'], 'parameter'].tolist()
    if fixed:
        logger.info(f"Constant parameter(s) with undefined autocorrelation: {fixed}")
    return report


def write_trace_html(chain: Chain, path, parameters=None):
    """One trace panel per parameter"""
    from plotly.subplots import make_subplots
    import plotly.graph_objects as go

    names = list(parameters or chain.names)
    fig = make_subplots(rows=len(names), cols=1, shared_xaxes=True, subplot_titles=names,
                        vertical_spacing=min(0.02, 1.0 / max(len(names), 1) * 0.3))
    iters = np.arange(chain.burn_in, chain.burn_in + len(chain))
    for row, name in enumerate(names, start=1):
        fig.add_trace(go.Scattergl(x=iters, y=chain.column(name), mode='lines', name=name,
                                   line={'width': 1}), row=row, col=1)
    fig.update_layout(height=180 * len(names), showlegend=False, title='MCMC trace plots')
    fig.write_html(path, include_plotlyjs='cdn')


def write_diagnostics(chain: Chain, directory, html=True):
    """
    Write trace.csv, diagnostics.csv, diagnostics.json and (optionally) trace.html.

    Returns:
        dict summary with the acceptance rates and the worst split R-hat
    """
    os.makedirs(directory, exist_ok=True)
    trace_frame(chain).to_csv(os.path.join(directory, 'trace.csv'), index=False)
    report = diagnose(chain)
    report.to_csv(os.path.join(directory, 'diagnostics.csv'), index=False)

    rhat = report['split_rhat'].dropna()
    summary = {
        'draws': len(chain),
        'acceptance_rate': chain.acceptance_rate,
        'burn_in_acceptance_rate': chain.burn_in_acceptance_rate,
        'max_split_rhat': float(rhat.max()) if len(rhat) else None,
    }
    with open(os.path.join(directory, 'diagnostics.json'), 'w', encoding='utf-8') as f:
        json.dump(summary, f, indent=2, sort_keys=True)

    if html:
        varying = [n for n, undefined in zip(report['parameter'], report['autocorr_undefined']) if not undefined]
        try:
            write_trace_html(chain, os.path.join(directory, 'trace.html'), varying or None)
        except ImportError:
            logger.warning("plotly is not installed; skipping trace.html")
    if summary['max_split_rhat'] is not None and summary['max_split_rhat'] > 1.1:
        logger.warning(f"Split R-hat up to {summary['max_split_rhat']:.3f}; the chain may not have converged")
    logger.info(f"Diagnostics written to {directory}")
    return summary
