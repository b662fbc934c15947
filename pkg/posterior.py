"""
Priors, the log-posterior and an adaptive random-walk Metropolis sampler.

The sampler works in an unconstrained space: rate parameters on the log scale,
probabilities and bounded uniforms on the logit scale, phases on the circle (the
coordinate is wrapped back into [low, high) after every proposal). Point-mass
parameters are held fixed. Proposal covariance and scale adapt during burn-in only
and are frozen afterwards.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import special, stats
from tqdm import tqdm

from errors import ConfigError, DataError, InvalidParameters, NumericalError
from latentpath import DyadBatch, dyad_geometry

logger = logging.getLogger(__name__)

FAMILIES = ('exponential', 'uniform', 'beta', 'point_mass')
TRANSFORMS = ('log', 'logit', 'wrap', 'identity', 'fixed')
DEFAULT_TRANSFORM = {'exponential': 'log', 'uniform': 'logit', 'beta': 'logit', 'point_mass': 'fixed'}


@dataclass(frozen=True)
class Prior:
    """
    One independent prior. Exponential priors take a rate (mean 1 / rate).
    """
    family: str
    rate: float = 1.0
    low: float = 0.0
    high: float = 1.0
    a: float = 1.0
    b: float = 1.0
    value: float = 0.0
    transform: str = ''

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"Unknown prior family '{self.family}'")
        transform = self.transform or DEFAULT_TRANSFORM[self.family]
        if transform not in TRANSFORMS:
            raise ConfigError(f"Unknown transform '{transform}'")
        allowed = {
            'exponential': ('log', 'identity'),
            'uniform': ('logit', 'wrap'),
            'beta': ('logit',),
            'point_mass': ('fixed',),
        }[self.family]
        if transform not in allowed:
            raise ConfigError(f"Transform '{transform}' does not match the support of a {self.family} prior")
        if self.family == 'exponential' and not self.rate > 0:
            raise ConfigError("Exponential prior needs a positive rate")
        if self.family == 'uniform' and not self.low < self.high:
            raise ConfigError("Uniform prior needs low < high")
        if self.family == 'beta' and not (self.a > 0 and self.b > 0):
            raise ConfigError("Beta prior needs positive shape parameters")
        object.__setattr__(self, 'transform', transform)

    @classmethod
    def from_config(cls, entry):
        entry = dict(entry)
        family = entry.pop('family', None)
        if family is None:
            raise ConfigError(f"Prior entry {entry} has no 'family'")
        unknown = set(entry) - {'rate', 'low', 'high', 'a', 'b', 'value', 'transform'}
        if unknown:
            raise ConfigError(f"Unknown prior field(s) {sorted(unknown)} for {family}")
        return cls(family=family, **{k: (v if k == 'transform' else float(v)) for k, v in entry.items()})

    @property
    def fixed(self):
        return self.family == 'point_mass'

    @property
    def dist(self):
        if self.family == 'exponential':
            return stats.expon(scale=1.0 / self.rate)
        if self.family == 'uniform':
            return stats.uniform(loc=self.low, scale=self.high - self.low)
        if self.family == 'beta':
            return stats.beta(self.a, self.b)
        return None

    def mean(self):
        return self.value if self.fixed else float(self.dist.mean())

    def var(self):
        return 0.0 if self.fixed else float(self.dist.var())

    def in_support(self, x):
        if self.family == 'exponential':
            return x >= 0.0
        if self.family == 'uniform':
            return self.low <= x < self.high if self.transform == 'wrap' else self.low < x < self.high
        if self.family == 'beta':
            return 0.0 < x < 1.0
        return x == self.value

    def log_density(self, x):
        if not self.in_support(x):
            return -math.inf
        if self.family == 'exponential':
            return math.log(self.rate) - self.rate * x
        if self.family == 'uniform':
            return -math.log(self.high - self.low)
        if self.family == 'beta':
            return ((self.a - 1.0) * math.log(x) + (self.b - 1.0) * math.log1p(-x)
                    - special.betaln(self.a, self.b))
        return 0.0

    def default_init(self):
        """Prior mean; circular parameters start at the middle of their range"""
        if self.transform == 'wrap':
            return 0.5 * (self.low + self.high)
        return self.mean()

    def to_unconstrained(self, x):
        if self.transform == 'log':
            return math.log(x) if x > 0 else -math.inf
        if self.transform == 'logit':
            lo, hi = self._bounds()
            return float(special.logit((x - lo) / (hi - lo)))
        return float(x)

    def from_unconstrained(self, u):
        """Returns (x, log |dx/du|)"""
        if self.transform == 'log':
            return math.exp(u), u
        if self.transform == 'logit':
            lo, hi = self._bounds()
            x = lo + (hi - lo) * special.expit(u)
            return float(x), math.log(hi - lo) + float(special.log_expit(u) + special.log_expit(-u))
        if self.transform == 'wrap':
            return self.low + (u - self.low) % (self.high - self.low), 0.0
        return float(u), 0.0

    def _bounds(self):
        return (0.0, 1.0) if self.family == 'beta' else (self.low, self.high)


class PriorSpec:
    """Ordered collection of independent priors, one per parameter"""

    def __init__(self, priors: Mapping[str, Prior]):
        self.priors = dict(priors)

    @classmethod
    def from_config(cls, config):
        return cls({name: entry if isinstance(entry, Prior) else Prior.from_config(entry)
                    for name, entry in config.items()})

    @property
    def names(self):
        return tuple(self.priors)

    @property
    def free_names(self):
        return tuple(n for n, p in self.priors.items() if not p.fixed)

    def ordered(self, names):
        return PriorSpec({n: self.priors[n] for n in names})

    def __getitem__(self, name):
        return self.priors[name]

    def initial_theta(self, overrides=None):
        overrides = overrides or {}
        unknown = set(overrides) - set(self.priors)
        if unknown:
            raise ConfigError(f"Init override(s) for unknown parameter(s) {sorted(unknown)}")
        theta = {}
        for name, prior in self.priors.items():
            value = float(overrides.get(name, prior.default_init()))
            if not prior.in_support(value):
                raise ConfigError(f"Initial value {value} for '{name}' lies outside its prior support")
            theta[name] = value
        return theta


def log_prior(spec: PriorSpec, theta):
    """Sum of independent prior log-densities; -inf outside the support"""
    total = 0.0
    for name, prior in spec.priors.items():
        lp = prior.log_density(theta[name])
        if lp == -math.inf:
            return -math.inf
        total += lp
    return total


class PosteriorTarget:
    """
    Unnormalised log-posterior of a model over a dataset.

    Dyad likelihoods are evaluated in vectorised chunks, optionally on a thread
    pool; the total uses exactly rounded summation so it does not depend on the
    chunking.
    """

    def __init__(self, spec, dataset, threads=None, prior_only=False):
        self.spec = spec
        self.prior_only = prior_only
        self.dyads = dataset.dyads if dataset is not None else []
        if not self.dyads and not prior_only:
            raise DataError("No modeled dyads: the likelihood is empty")
        geometries = [dyad_geometry(dataset.streams[d], spec.intensity) for d in self.dyads]
        covariates = dataset.covariates(spec.bindings) if dataset is not None else []
        self.batch = DyadBatch(geometries, covariates)
        self.threads = max(1, int(threads or 1))
        self.chunks = self.batch.chunks(self.threads) if self.dyads else []

    def dyad_logliks(self, theta):
        """Per-dyad log-likelihoods in self.dyads order"""
        if len(self.chunks) <= 1:
            return self.batch.logliks(self.spec.intensity, self.spec.sparsity, theta)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            parts = list(pool.map(lambda c: c.logliks(self.spec.intensity, self.spec.sparsity, theta),
                                  self.chunks))
        return np.concatenate(parts)

    def log_likelihood(self, theta):
        if self.prior_only:
            return 0.0
        try:
            values = self.dyad_logliks(theta)
        except InvalidParameters as e:
            logger.debug(f"Rejected parameter draw: {e}")
            return -math.inf
        if np.any(np.isnan(values)):
            return -math.inf
        return math.fsum(values.tolist())

    def log_posterior(self, theta):
        lp = log_prior(self.spec.prior, theta)
        if lp == -math.inf:
            return -math.inf
        ll = self.log_likelihood(theta)
        return lp + ll if ll != -math.inf else -math.inf


def log_posterior(theta, target: PosteriorTarget):
    """Sum of dyad log-likelihoods plus log-prior"""
    return target.log_posterior(theta)


@dataclass
class Chain:
    names: List[str]
    samples: np.ndarray
    log_posterior: np.ndarray
    seed: int
    burn_in: int
    iterations: int
    acceptance_rate: float = float('nan')
    burn_in_acceptance_rate: float = float('nan')
    free_names: List[str] = field(default_factory=list)

    def __len__(self):
        return int(self.samples.shape[0])

    def theta(self, k):
        return dict(zip(self.names, self.samples[k].tolist()))

    def column(self, name):
        return self.samples[:, self.names.index(name)]

    def thin(self, every):
        every = max(1, int(every))
        return Chain(self.names, self.samples[::every], self.log_posterior[::every], self.seed,
                     self.burn_in, self.iterations, self.acceptance_rate, self.burn_in_acceptance_rate,
                     list(self.free_names))

    def meta(self):
        return {
            'seed': self.seed,
            'burn_in': self.burn_in,
            'iterations': self.iterations,
            'acceptance_rate': self.acceptance_rate,
            'burn_in_acceptance_rate': self.burn_in_acceptance_rate,
            'free_names': list(self.free_names),
        }


def _cholesky(cov):
    d = cov.shape[0]
    jitter = 1e-10
    for _ in range(8):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            jitter *= 100.0
    return np.diag(np.sqrt(np.maximum(np.diag(cov), 1e-12)))


def sample_posterior(target: PosteriorTarget, mcmc=None, seed=0):
    """
    Adaptive random-walk Metropolis.

    Args:
        target: PosteriorTarget (its spec carries the priors)
        mcmc: dict with iterations (total, including burn-in), burn_in, target_accept
            [low, high], init overrides and show_progress
        seed: integer seed; the chain is a function of the seed alone

    Returns:
        Chain of iterations - burn_in retained draws
    """
    mcmc = dict(mcmc or {})
    iterations = int(mcmc.get('iterations', 10000))
    burn_in = int(mcmc.get('burn_in', 1000))
    if iterations < 1 or burn_in < 0 or burn_in >= iterations:
        raise ConfigError(f"Need 0 <= burn_in < iterations, got burn_in={burn_in}, iterations={iterations}")
    accept_lo, accept_hi = mcmc.get('target_accept', (0.2, 0.4))
    if not 0.0 < accept_lo <= accept_hi < 1.0:
        raise ConfigError(f"Invalid target acceptance range {mcmc.get('target_accept')}")
    accept_target = 0.5 * (accept_lo + accept_hi)

    prior = target.spec.prior
    names = list(prior.names)
    free = list(prior.free_names)
    priors = [prior[n] for n in free]
    d = len(free)
    wrap = np.array([p.transform == 'wrap' for p in priors], dtype=bool)
    lows = np.array([p.low for p in priors])
    widths = np.array([p.high - p.low for p in priors])

    theta = prior.initial_theta(mcmc.get('init'))

    def unpack(u):
        values = dict(theta)
        log_jac = 0.0
        for k, (name, p) in enumerate(zip(free, priors)):
            values[name], jac = p.from_unconstrained(u[k])
            log_jac += jac
        return values, log_jac

    u = np.array([p.to_unconstrained(theta[n]) for n, p in zip(free, priors)], dtype=float)
    if not np.all(np.isfinite(u)):
        raise ConfigError("Initial values sit on the boundary of the parameter space")
    current, log_jac = unpack(u)
    current_lp = target.log_posterior(current)
    if not np.isfinite(current_lp):
        raise NumericalError("Log-posterior is not finite at the initial values")
    current_target = current_lp + log_jac

    rng = np.random.default_rng(seed)
    kept = iterations - burn_in
    samples = np.empty((kept, len(names)))
    log_posts = np.empty(kept)

    log_scale = 0.0
    base_cov = 0.01 * np.eye(d)
    chol = _cholesky(base_cov) if d else np.zeros((0, 0))
    mean = u.copy()
    scatter = np.zeros((d, d))
    adapt_after = max(100, 2 * d)
    accepted_burn = accepted_main = 0

    progress = tqdm(range(iterations), desc='MCMC', disable=None if mcmc.get('show_progress', True) else True, leave=False)
    for n in progress:
        proposal = u + math.exp(log_scale) * (chol @ rng.standard_normal(d)) if d else u
        if wrap.any():
            proposal[wrap] = lows[wrap] + np.mod(proposal[wrap] - lows[wrap], widths[wrap])
        values, prop_jac = unpack(proposal)
        prop_lp = target.log_posterior(values)
        prop_target = prop_lp + prop_jac
        accept = np.isfinite(prop_target) and math.log(rng.random()) < prop_target - current_target
        if accept:
            u, current, current_lp, current_target = proposal, values, prop_lp, prop_target

        if n < burn_in:
            accepted_burn += accept
            # Robbins-Monro on the global scale, running covariance for the shape
            log_scale += (float(accept) - accept_target) / (n + 1) ** 0.6
            delta = u - mean
            mean = mean + delta / (n + 2)
            scatter += np.outer(delta, u - mean)
            if n + 1 >= adapt_after and d:
                emp = scatter / (n + 1)
                chol = _cholesky((2.38 ** 2 / d) * emp + 1e-8 * np.eye(d))
                if n + 1 == adapt_after:
                    log_scale = 0.0
        else:
            accepted_main += accept
            k = n - burn_in
            samples[k] = [current[name] for name in names]
            log_posts[k] = current_lp

    rate = accepted_main / kept
    burn_rate = accepted_burn / burn_in if burn_in else float('nan')
    if not accept_lo <= rate <= accept_hi:
        logger.warning(f"Post burn-in acceptance rate {rate:.3f} is outside the target range "
                       f"[{accept_lo}, {accept_hi}]")
    logger.info(f"MCMC finished: {kept} draws kept, acceptance {rate:.3f} (burn-in {burn_rate:.3f})")
    return Chain(names, samples, log_posts, int(seed), burn_in, iterations, rate, burn_rate, free)


def write_chain_csv(chain: Chain, path):
    """Chain as CSV: iter, log_posterior, one column per parameter"""
    df = pd.DataFrame(chain.samples, columns=chain.names)
    df.insert(0, 'log_posterior', chain.log_posterior)
    df.insert(0, 'iter', np.arange(chain.burn_in, chain.burn_in + len(chain)))
    df.to_csv(path, index=False)


def read_chain_csv(path, meta=None):
    try:
        df = pd.read_csv(path, float_precision='round_trip')
    except (OSError, ValueError) as e:
        raise DataError(f"Cannot read chain {path}: {e}") from e
    if list(df.columns[:2]) != ['iter', 'log_posterior']:
        raise DataError(f"{path}: line 1: expected header 'iter,log_posterior,<params>'")
    meta = dict(meta or {})
    names = list(df.columns[2:])
    iters = df['iter'].to_numpy()
    return Chain(names, df[names].to_numpy(dtype=float), df['log_posterior'].to_numpy(dtype=float),
                 int(meta.get('seed', 0)), int(meta.get('burn_in', iters[0] if len(iters) else 0)),
                 int(meta.get('iterations', (iters[-1] + 1) if len(iters) else 0)),
                 float(meta.get('acceptance_rate', float('nan'))),
                 float(meta.get('burn_in_acceptance_rate', float('nan'))),
                 list(meta.get('free_names', names)))
