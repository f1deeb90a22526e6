"""Posterior inference over subspace coordinates and BMA prediction.

Two samplers operate on the same target abstraction: Metropolis-corrected
leapfrog HMC with dual-averaging step-size adaptation, and mean-field Gaussian
variational inference trained by Adam on the reparameterized ELBO with a
closed-form KL term. The full-network baseline is the same machinery run with
an identity subspace model; there is no separate code path.

Coordinates: z has K entries for the subspace, plus one trailing global
log-noise-scale coordinate when the network head does not model variance.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidInputError,
    NumericDomainError,
    SamplerStuckError,
    TrainingDivergedError,
)
from .network import GradTarget, batch_target_value_grad, forward_batch
from .subspace import embed, pullback_gradient

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# noise models and targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeadNoise:
    """Predictive variance comes from the network's variance head."""

    extra_dims = 0


@dataclass(frozen=True)
class GlobalNoise:
    """Scalar-head likelihood with one inferred global log-noise-scale.

    The extra coordinate s (appended to z) parameterizes the observation
    variance exp(2s) and carries a N(prior_mean, prior_std^2) prior.
    """

    prior_mean: float = math.log(0.5)
    prior_std: float = 1.0
    extra_dims = 1


def noise_for(config):
    return HeadNoise() if config.head == "mean_variance" else GlobalNoise()


@dataclass
class TargetDensity:
    """Log-density over R^dim and its exact gradient."""

    log_density: callable
    grad_log_density: callable
    dim: int


@dataclass
class LogLikelihood:
    """Likelihood-only part of a target (the prior is handled analytically)."""

    value: callable
    value_and_grad: callable
    dim: int


def _split_coords(model, z, noise):
    z = np.asarray(z, dtype=np.float64)
    expected = model.k + noise.extra_dims
    if z.ndim != 1 or z.size != expected:
        raise InvalidInputError(f"z has length {z.size}, expected {expected}")
    if noise.extra_dims:
        return z[: model.k], float(z[model.k])
    return z, None


def _data_loglik_and_grads(config, dataset, theta, noise, s):
    """Gaussian log-likelihood of the dataset plus gradients w.r.t. theta
    (full length) and, for GlobalNoise, w.r.t. the log-noise coordinate."""
    n_data = dataset.n
    if isinstance(noise, GlobalNoise):
        var = math.exp(2.0 * s)
        values, grad_sse = batch_target_value_grad(
            config, theta, dataset.x, dataset.y, GradTarget.MSE_LOSS
        )
        sse = float(values.sum())
        loglik = -0.5 * n_data * (LOG_2PI + 2.0 * s) - sse / (2.0 * var)
        grad_theta = -grad_sse / (2.0 * var)
        grad_s = -n_data + sse / var
        return loglik, grad_theta, grad_s
    values, grad_nll = batch_target_value_grad(
        config, theta, dataset.x, dataset.y, GradTarget.GAUSSIAN_NLL
    )
    return -float(values.sum()), -grad_nll, None


def _log_prior(model, z_sub, noise, s):
    k = z_sub.size
    sigma = model.prior_std
    lp = -0.5 * k * LOG_2PI - k * math.log(sigma) - float(z_sub @ z_sub) / (2.0 * sigma**2)
    if isinstance(noise, GlobalNoise):
        d = s - noise.prior_mean
        lp += -0.5 * LOG_2PI - math.log(noise.prior_std) - d * d / (2.0 * noise.prior_std**2)
    return lp


def subspace_log_posterior(model, config, dataset, z, noise):
    """log p(D | embed(z)) + log N(z; 0, prior_std^2 I) (+ noise-coordinate prior)."""
    z_sub, s = _split_coords(model, z, noise)
    theta = embed(model, z_sub)
    loglik, _, _ = _data_loglik_and_grads(config, dataset, theta, noise, s)
    value = loglik + _log_prior(model, z_sub, noise, s)
    if not np.isfinite(value):
        raise NumericDomainError(f"non-finite log posterior at z={z!r}")
    return float(value)


def grad_subspace_log_posterior(model, config, dataset, z, noise):
    """Exact gradient of subspace_log_posterior (chain rule through embed)."""
    z_sub, s = _split_coords(model, z, noise)
    theta = embed(model, z_sub)
    _, grad_theta, grad_s = _data_loglik_and_grads(config, dataset, theta, noise, s)
    g = np.empty(z_sub.size + noise.extra_dims)
    g[: z_sub.size] = pullback_gradient(model, grad_theta) - z_sub / model.prior_std**2
    if isinstance(noise, GlobalNoise):
        g[-1] = grad_s - (s - noise.prior_mean) / noise.prior_std**2
    if not np.isfinite(g).all():
        raise NumericDomainError(f"non-finite log-posterior gradient at z={z!r}")
    return g


def make_target(model, config, dataset, noise):
    dim = model.k + noise.extra_dims
    return TargetDensity(
        log_density=lambda z: subspace_log_posterior(model, config, dataset, z, noise),
        grad_log_density=lambda z: grad_subspace_log_posterior(model, config, dataset, z, noise),
        dim=dim,
    )


def make_loglik(model, config, dataset, noise):
    """Likelihood part only, for the ELBO (the z-prior enters through the KL)."""
    dim = model.k + noise.extra_dims

    def value_and_grad(z):
        z_sub, s = _split_coords(model, z, noise)
        theta = embed(model, z_sub)
        loglik, grad_theta, grad_s = _data_loglik_and_grads(config, dataset, theta, noise, s)
        g = np.empty(dim)
        g[: z_sub.size] = pullback_gradient(model, grad_theta)
        if isinstance(noise, GlobalNoise):
            g[-1] = grad_s
        return float(loglik), g

    return LogLikelihood(
        value=lambda z: value_and_grad(z)[0],
        value_and_grad=value_and_grad,
        dim=dim,
    )


# ---------------------------------------------------------------------------
# Hamiltonian Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class PosteriorSamples:
    """Draws of subspace coordinates, one row per draw."""

    draws: np.ndarray
    source: str
    acceptance_rate: float = None

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=np.float64)
        if self.draws.ndim != 2 or self.draws.shape[0] < 1:
            raise InvalidInputError("draws must be a (J, K) matrix with J >= 1")
        if not np.isfinite(self.draws).all():
            raise InvalidInputError("draws contain non-finite values")

    @property
    def n_draws(self):
        return self.draws.shape[0]


def leapfrog(grad_fn, z, p, step_size, n_steps):
    """Leapfrog integrator; returns (z, p, ok) where ok=False flags a
    non-finite excursion (caller treats the trajectory as rejected)."""
    z = np.array(z, dtype=np.float64)
    p = np.array(p, dtype=np.float64)
    g = grad_fn(z)
    if not np.isfinite(g).all():
        return z, p, False
    p = p + 0.5 * step_size * g
    for i in range(n_steps):
        z = z + step_size * p
        if not np.isfinite(z).all():
            return z, p, False
        g = grad_fn(z)
        if not np.isfinite(g).all():
            return z, p, False
        if i < n_steps - 1:
            p = p + step_size * g
    p = p + 0.5 * step_size * g
    return z, p, True


def find_reasonable_step_size(target, z0, rng):
    """Doubling heuristic: scale a unit step until a single leapfrog step has
    acceptance ratio on the far side of 1/2."""
    dim = z0.size
    eps = 1.0
    logp0 = target.log_density(z0)
    p0 = rng.gen.standard_normal(dim)

    def log_ratio(eps):
        z1, p1, ok = leapfrog(target.grad_log_density, z0, p0, eps, 1)
        if not ok:
            return -np.inf
        try:
            logp1 = target.log_density(z1)
        except NumericDomainError:
            return -np.inf
        return logp1 - 0.5 * float(p1 @ p1) - (logp0 - 0.5 * float(p0 @ p0))

    r = log_ratio(eps)
    shrink_guard = 0
    while not np.isfinite(r) and shrink_guard < 100:
        eps *= 0.5
        r = log_ratio(eps)
        shrink_guard += 1
    direction = 1.0 if r > math.log(0.5) else -1.0
    for _ in range(100):
        eps *= 2.0**direction
        r = log_ratio(eps)
        if direction * r <= direction * math.log(0.5) or not (1e-10 < eps < 1e6):
            break
    return eps


def hmc_run(
    target,
    init,
    leapfrog_steps,
    warmup,
    n_samples,
    rng,
    target_accept=0.8,
    step_size=None,
):
    """Metropolis-corrected HMC with dual-averaging step-size adaptation.

    The step size is adapted during warmup toward target_accept and then
    frozen at the dual-averaging estimate; pass step_size to skip adaptation.
    Raises SamplerStuckError after 500 consecutive rejections.
    """
    if leapfrog_steps < 1:
        raise InvalidInputError(f"leapfrog_steps must be >= 1, got {leapfrog_steps}")
    if warmup < 0 or n_samples < 1:
        raise InvalidInputError("warmup must be >= 0 and n_samples >= 1")
    z = np.array(init, dtype=np.float64)
    if z.size != target.dim:
        raise InvalidInputError(f"init has length {z.size}, expected {target.dim}")
    logp = target.log_density(z)

    adapt = step_size is None
    eps = find_reasonable_step_size(target, z, rng) if adapt else float(step_size)
    # dual averaging state (Hoffman & Gelman 2014, Stan constants)
    mu = math.log(10.0 * eps) if adapt and eps > 0 else 0.0
    log_eps_bar = math.log(eps) if eps > 0 else 0.0
    h_bar = 0.0
    gamma, t0, kappa = 0.05, 10.0, 0.75

    draws = np.empty((n_samples, target.dim))
    accepted_post = 0
    consecutive_rejects = 0
    for it in range(warmup + n_samples):
        p0 = rng.gen.standard_normal(target.dim)
        z_new, p_new, ok = leapfrog(target.grad_log_density, z, p0, eps, leapfrog_steps)
        if ok:
            try:
                logp_new = target.log_density(z_new)
            except NumericDomainError:
                ok = False
        if ok:
            d_h = (logp_new - 0.5 * float(p_new @ p_new)) - (logp - 0.5 * float(p0 @ p0))
            alpha = 1.0 if d_h >= 0 else math.exp(d_h)
        else:
            alpha = 0.0
        if alpha >= 1.0 or rng.gen.uniform() < alpha:
            z, logp = z_new, logp_new
            consecutive_rejects = 0
            if it >= warmup:
                accepted_post += 1
        else:
            consecutive_rejects += 1
            if consecutive_rejects >= 500:
                raise SamplerStuckError(
                    f"500 consecutive rejections at iteration {it} (step size {eps:.3g})"
                )
        if adapt:
            if it < warmup:
                m = it + 1
                eta = 1.0 / (m + t0)
                h_bar = (1.0 - eta) * h_bar + eta * (target_accept - alpha)
                log_eps = mu - math.sqrt(m) / gamma * h_bar
                w = m**-kappa
                log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar
                eps = math.exp(log_eps)
            elif it == warmup:
                eps = math.exp(log_eps_bar)
        if it == warmup - 1 and adapt:
            eps = math.exp(log_eps_bar)
        if it >= warmup:
            draws[it - warmup] = z
    return PosteriorSamples(
        draws=draws,
        source="HMC",
        acceptance_rate=accepted_post / n_samples,
    )


# ---------------------------------------------------------------------------
# mean-field variational inference
# ---------------------------------------------------------------------------

@dataclass
class VariationalParams:
    """Diagonal Gaussian q(z) = N(mean, diag(exp(log_std)^2))."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.mean.shape != self.log_std.shape or self.mean.ndim != 1:
            raise InvalidInputError("mean and log_std must be 1-d arrays of equal length")
        if not (np.isfinite(self.mean).all() and np.isfinite(self.log_std).all()):
            raise InvalidInputError("variational parameters must be finite")

    @property
    def std(self):
        return np.exp(self.log_std)

    @property
    def dim(self):
        return self.mean.size


def kl_diag_gaussians(q, prior_std):
    """KL(q || N(0, prior_std^2 I)) in closed form."""
    sigma2 = q.std**2
    return float(
        np.sum(
            math.log(prior_std)
            - q.log_std
            + (sigma2 + q.mean**2) / (2.0 * prior_std**2)
            - 0.5
        )
    )


def elbo_estimate(q, loglik, prior_std, n_mc, rng):
    """Reparameterized Monte Carlo ELBO: E_q[log p(D|z)] - KL(q, prior)."""
    if n_mc < 1:
        raise InvalidInputError(f"n_mc must be >= 1, got {n_mc}")
    sigma = q.std
    total = 0.0
    for _ in range(n_mc):
        z = q.mean + sigma * rng.gen.standard_normal(q.dim)
        lv = loglik.value(z)
        if not np.isfinite(lv):
            raise NumericDomainError(f"non-finite log-likelihood sample at z={z!r}")
        total += lv
    return total / n_mc - kl_diag_gaussians(q, prior_std)


@dataclass
class ViHyper:
    steps: int = 3000
    learning_rate: float = 0.01
    mc_samples: int = 1
    init_log_std: float = -1.0


def fit_vi(loglik, dim, prior_std, hyper, rng, init_mean=None, return_trace=False):
    """Adam ascent on the reparameterized ELBO with closed-form KL.

    One likelihood sample per step by default; the KL term and its gradient
    are analytic, which keeps the gradient variance down.
    """
    if hyper.steps < 1:
        raise InvalidInputError("steps must be >= 1")
    mean = np.zeros(dim) if init_mean is None else np.array(init_mean, dtype=np.float64)
    log_std = np.full(dim, float(hyper.init_log_std))

    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    m_state = np.zeros(2 * dim)
    v_state = np.zeros(2 * dim)
    trace = np.empty(hyper.steps) if return_trace else None

    for step in range(1, hyper.steps + 1):
        sigma = np.exp(log_std)
        g_mean = np.zeros(dim)
        g_rho = np.zeros(dim)
        lv_mean = 0.0
        for _ in range(hyper.mc_samples):
            eps_draw = rng.gen.standard_normal(dim)
            z = mean + sigma * eps_draw
            lv, lg = loglik.value_and_grad(z)
            if not (np.isfinite(lv) and np.isfinite(lg).all()):
                raise TrainingDivergedError(
                    f"non-finite ELBO gradient at step {step}"
                )
            g_mean += lg
            g_rho += lg * sigma * eps_draw
            lv_mean += lv
        g_mean /= hyper.mc_samples
        g_rho /= hyper.mc_samples
        lv_mean /= hyper.mc_samples
        # closed-form KL gradients: dKL/dmean = mean/prior^2, dKL/drho = sigma^2/prior^2 - 1
        g_mean -= mean / prior_std**2
        g_rho += 1.0 - sigma**2 / prior_std**2

        grad = np.concatenate([g_mean, g_rho])
        m_state = beta1 * m_state + (1.0 - beta1) * grad
        v_state = beta2 * v_state + (1.0 - beta2) * grad**2
        m_hat = m_state / (1.0 - beta1**step)
        v_hat = v_state / (1.0 - beta2**step)
        update = hyper.learning_rate * m_hat / (np.sqrt(v_hat) + adam_eps)
        mean = mean + update[:dim]
        log_std = log_std + update[dim:]
        if return_trace:
            q_now = VariationalParams(mean=mean, log_std=log_std)
            trace[step - 1] = lv_mean - kl_diag_gaussians(q_now, prior_std)

    params = VariationalParams(mean=mean, log_std=log_std)
    if return_trace:
        return params, trace
    return params


# ---------------------------------------------------------------------------
# posterior draws and Bayesian model averaging
# ---------------------------------------------------------------------------

def draw_posterior(source, n_draws, rng):
    """J draws for BMA: evenly thinned from an HMC chain, or fresh
    reparameterized samples from a fitted variational distribution."""
    if n_draws < 1:
        raise InvalidInputError(f"n_draws must be >= 1, got {n_draws}")
    if isinstance(source, PosteriorSamples):
        total = source.n_draws
        if total < n_draws:
            raise InvalidInputError(f"only {total} draws available, need {n_draws}")
        stride = total // n_draws
        idx = stride * np.arange(1, n_draws + 1) - 1
        return PosteriorSamples(
            draws=source.draws[idx].copy(),
            source=source.source,
            acceptance_rate=source.acceptance_rate,
        )
    if isinstance(source, VariationalParams):
        eps = rng.gen.standard_normal((n_draws, source.dim))
        return PosteriorSamples(draws=source.mean + source.std * eps, source="VI")
    raise InvalidInputError(f"cannot draw from source of type {type(source).__name__}")


@dataclass
class PredictiveMixture:
    """Per-test-point Gaussian mixture with J components: means and variances
    are (J, N) arrays. Mixture moments follow the law of total variance."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        if self.means.shape != self.variances.shape:
            raise InvalidInputError("means and variances must have equal shapes")

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def n_points(self):
        return self.means.shape[1]

    @property
    def mixture_mean(self):
        return self.means.mean(axis=0)

    @property
    def mixture_variance(self):
        return self.variances.mean(axis=0) + self.means.var(axis=0)

    def affine(self, scale, shift):
        """Mixture of y -> scale*y + shift; used to de-standardize predictions."""
        return PredictiveMixture(
            means=self.means * scale + shift,
            variances=self.variances * scale**2,
        )


def bma_predictive(model, samples, config, x_test, noise):
    """Predictive mixture with one Gaussian component per posterior draw."""
    x_test = np.asarray(x_test, dtype=np.float64)
    draws = samples.draws
    n_draws = draws.shape[0]
    means = np.empty((n_draws, x_test.shape[0]))
    variances = np.empty_like(means)
    for j in range(n_draws):
        z_sub, s = _split_coords(model, draws[j], noise)
        theta = embed(model, z_sub)
        mu, v = forward_batch(config, theta, x_test)
        means[j] = mu
        variances[j] = math.exp(2.0 * s) if isinstance(noise, GlobalNoise) else v
    return PredictiveMixture(means=means, variances=variances)


def averaged_weight_diagnostic(model, samples):
    """Algorithm-style single averaged weight vector anchor + P * mean(z).

    Diagnostic only; reported metrics always use the full BMA mixture.
    """
    z_mean = samples.draws[:, : model.k].mean(axis=0)
    return model.anchor + model.projection.matrix @ z_mean


def save_samples_csv(path, samples, has_noise_coord):
    """CSV dump: header z_1..z_K[,log_noise], one row per draw."""
    n_cols = samples.draws.shape[1]
    n_z = n_cols - 1 if has_noise_coord else n_cols
    header = [f"z_{i + 1}" for i in range(n_z)]
    if has_noise_coord:
        header.append("log_noise")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in samples.draws:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def load_samples_csv(path):
    """Returns (PosteriorSamples, has_noise_coord)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [
            [float(cell) for cell in line.strip().split(",")]
            for line in fh
            if line.strip()
        ]
    if not rows:
        raise InvalidInputError(f"{path}: no posterior draws")
    has_noise = header[-1] == "log_noise"
    return PosteriorSamples(draws=np.asarray(rows), source="file"), has_noise
