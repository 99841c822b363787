"""Diagonal-covariance Gaussian mixture over tensor columns.

One mixture instance is applied independently to every spatial column of an
N x H x W x D tensor. Training is plain gradient ascent on the mean
per-column log-likelihood with unconstrained parameterizations: mixture
weights via softmax over free weights, variances via exp(2 * log_sigma)
with a floor. An optional grid-neighborhood annealing smooths the
responsibilities used to form the gradient early in training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ControlError, NumericError, ShapeError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GmmParams:
    free_weights: np.ndarray  # (K,), pi = softmax(free_weights)
    mu: np.ndarray            # (K, D)
    log_sigma: np.ndarray     # (K, D), sigma2 = exp(2 * log_sigma)
    # variance floor: keeps components from collapsing on constant input
    # dimensions and keeps posteriors well-conditioned (a floor much below
    # ~0.05 lets single near-constant pixels dominate the log-densities,
    # which measurably scrambles component assignments on image data)
    sigma2_min: float = 0.05

    @property
    def n_components(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    @property
    def pi(self) -> np.ndarray:
        z = self.free_weights - self.free_weights.max()
        e = np.exp(z)
        return e / e.sum()

    @property
    def sigma2(self) -> np.ndarray:
        return np.exp(2.0 * self.log_sigma)

    def copy(self) -> "GmmParams":
        return GmmParams(
            free_weights=self.free_weights.copy(),
            mu=self.mu.copy(),
            log_sigma=self.log_sigma.copy(),
            sigma2_min=self.sigma2_min,
        )


def init_gmm(
    n_components: int,
    dim: int,
    seed_or_rng=0,
    mu_center: float = 0.5,
    mu_spread: float = 0.05,
    sigma2: float = 0.1,
    sigma2_min: float = 0.05,
) -> GmmParams:
    """Near-center initialization for data normalized to [0, 1]."""
    rng = np.random.default_rng(seed_or_rng) if isinstance(seed_or_rng, int) else seed_or_rng
    mu = rng.uniform(mu_center - mu_spread, mu_center + mu_spread, size=(n_components, dim))
    return GmmParams(
        free_weights=np.zeros(n_components),
        mu=mu,
        log_sigma=np.full((n_components, dim), 0.5 * np.log(sigma2)),
        sigma2_min=sigma2_min,
    )


@dataclass
class AnnealState:
    """Exponentially decaying neighborhood radius over a square component grid.

    While radius > radius_inf, responsibilities are smoothed over the grid
    before the gradient is formed; at or below radius_inf smoothing is the
    identity. decay_iters = 0 means "not scheduled yet" and is filled in
    when the first training run starts.
    """

    grid_side: int
    radius0: float
    radius_inf: float = 0.01
    decay_iters: int = 0
    step_count: int = 0
    radius: float = field(default=0.0)

    def __post_init__(self):
        if self.radius == 0.0:
            self.radius = self.radius0

    @classmethod
    def for_grid(cls, n_components: int) -> "AnnealState":
        side = int(round(np.sqrt(n_components)))
        if side * side != n_components:
            return cls.disabled(n_components)
        return cls(grid_side=side, radius0=0.5 * side)

    @classmethod
    def disabled(cls, n_components: int) -> "AnnealState":
        side = max(1, int(round(np.sqrt(n_components))))
        return cls(grid_side=side, radius0=0.01, radius_inf=0.01, radius=0.01)

    @property
    def enabled(self) -> bool:
        return self.radius > self.radius_inf

    def disable(self) -> None:
        self.radius = self.radius_inf

    def advance(self) -> None:
        self.step_count += 1
        if self.decay_iters <= 0 or self.radius0 <= self.radius_inf:
            return
        t = min(1.0, self.step_count / self.decay_iters)
        self.radius = max(
            self.radius_inf,
            self.radius0 * (self.radius_inf / self.radius0) ** t,
        )

    def smoothing_matrix(self, n_components: int):
        """Row-stochastic Gaussian kernel over grid positions, or None."""
        if not self.enabled:
            return None
        side = self.grid_side
        if side * side != n_components:
            return None
        pos = np.stack(np.divmod(np.arange(n_components), side), axis=1).astype(float)
        d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
        s = np.exp(-d2 / (2.0 * self.radius * self.radius))
        return s / s.sum(axis=1, keepdims=True)


def _as_columns(x: np.ndarray, dim: int) -> np.ndarray:
    if x.ndim == 4:
        if x.shape[3] != dim:
            raise ShapeError(f"channel dim {x.shape[3]} != mixture dim {dim}")
        return x.reshape(-1, dim)
    if x.ndim == 2:
        if x.shape[1] != dim:
            raise ShapeError(f"column dim {x.shape[1]} != mixture dim {dim}")
        return x
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ShapeError(f"vector dim {x.shape[0]} != mixture dim {dim}")
        return x[np.newaxis, :]
    raise ShapeError(f"expected vector, matrix, or NHWC tensor, got shape {x.shape}")


def _weighted_log_probs(cols: np.ndarray, p: GmmParams) -> np.ndarray:
    """log(pi_k) + log N(x; mu_k, diag sigma2_k) for every column. (M, K)."""
    s2 = p.sigma2
    inv = 1.0 / s2
    const = -0.5 * (p.dim * LOG_2PI + np.log(s2).sum(axis=1))  # (K,)
    quad = (
        (cols * cols) @ inv.T
        - 2.0 * (cols @ (p.mu * inv).T)
        + (p.mu * p.mu * inv).sum(axis=1)
    )
    logpi = np.log(p.pi)
    return logpi + const - 0.5 * quad


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=1, keepdims=True)))[:, 0]


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def column_log_densities(x: np.ndarray, p: GmmParams) -> np.ndarray:
    """Per-column log of the mixture density, via log-sum-exp."""
    cols = _as_columns(x, p.dim)
    return _logsumexp_rows(_weighted_log_probs(cols, p))


def log_density(x: np.ndarray, p: GmmParams) -> float:
    """Mixture log-density of a single D-vector."""
    return float(column_log_densities(np.asarray(x, dtype=float), p)[0])


def column_responsibilities(x: np.ndarray, p: GmmParams) -> np.ndarray:
    """Per-column posterior component probabilities (rows sum to 1)."""
    cols = _as_columns(x, p.dim)
    return _softmax_rows(_weighted_log_probs(cols, p))


def responsibilities(x: np.ndarray, p: GmmParams) -> np.ndarray:
    """Posterior component probabilities for a single D-vector."""
    return column_responsibilities(np.asarray(x, dtype=float), p)[0]


def forward(x: np.ndarray, p: GmmParams) -> np.ndarray:
    """Responsibilities for every column of an N x H x W x D tensor."""
    if x.ndim != 4:
        raise ShapeError(f"forward expects an NHWC tensor, got shape {x.shape}")
    n, h, w, _ = x.shape
    gamma = column_responsibilities(x, p)
    return gamma.reshape(n, h, w, p.n_components)


def score_batch(x: np.ndarray, p: GmmParams) -> float:
    """Mean per-column log-density of a batch (outlier / boundary signal)."""
    ld = column_log_densities(x, p)
    if ld.size == 0:
        raise ShapeError("cannot score an empty batch")
    return float(ld.mean())


def _batch_stats(x: np.ndarray, p: GmmParams, smoothing: np.ndarray | None = None):
    """Responsibility-weighted sufficient statistics of a batch.

    When ``smoothing`` is given (annealing), each column's responsibility
    mass is reassigned to the Gaussian grid neighborhood of its dominant
    component; this winner-guided smoothing is what produces the
    topological ordering of the prototypes. The returned log-likelihood is
    always the exact, unsmoothed one.
    """
    cols = _as_columns(x, p.dim)
    m = cols.shape[0]
    wlp = _weighted_log_probs(cols, p)
    mean_ll = float(_logsumexp_rows(wlp).mean())
    if smoothing is not None:
        # ordering phase: winners by plain distance, so neither drifting
        # weights nor broad variances can monopolize the map
        d2 = (
            (cols * cols).sum(axis=1, keepdims=True)
            - 2.0 * cols @ p.mu.T
            + (p.mu * p.mu).sum(axis=1)
        )
        gamma = smoothing[np.argmin(d2, axis=1)]
    else:
        gamma = _softmax_rows(wlp)
    occ = gamma.sum(axis=0)            # (K,)
    gx = gamma.T @ cols                # (K, D)
    gxx = gamma.T @ (cols * cols)      # (K, D)
    ess_sq = gxx - 2.0 * p.mu * gx + occ[:, None] * (p.mu * p.mu)
    return m, occ, gx, ess_sq, mean_ll


def gradients(x: np.ndarray, p: GmmParams, smoothing: np.ndarray | None = None):
    """Ascent gradients of the mean per-column log-likelihood.

    Returns ((g_free_weights, g_mu, g_log_sigma), mean_log_likelihood).
    """
    m, occ, gx, ess_sq, mean_ll = _batch_stats(x, p, smoothing)
    s2 = p.sigma2
    g_w = (occ / m) - p.pi * (occ.sum() / m)
    g_mu = (gx - occ[:, None] * p.mu) / s2 / m
    g_ls = (ess_sq / s2 - occ[:, None]) / m
    return (g_w, g_mu, g_ls), mean_ll


def train_step(
    batch: np.ndarray,
    p: GmmParams,
    lr: float,
    anneal: AnnealState | None = None,
    grad_clip: float = 1.0,
    occupancy_floor: float = 1e-8,
) -> float:
    """One ascent step on a batch; returns the pre-update mean per-column
    log-likelihood. Mutates ``p`` (and advances ``anneal``).

    The step direction is the log-likelihood gradient preconditioned
    per component: mean and log-variance moves are normalized by the
    component's responsibility mass and the covariance metric, so each
    mean travels a fraction ``lr`` toward its responsibility-weighted
    batch mean regardless of data scale. Raw-gradient steps shrink with
    the occupancy and blow up as 1/sigma2, which makes a fixed step size
    either uselessly slow or divergent; the preconditioned direction
    agrees with the gradient coordinatewise in sign (the raw gradients
    themselves are available from :func:`gradients`). Steps are clipped
    elementwise to [-grad_clip, grad_clip] before scaling by ``lr``.
    """
    smoothing = anneal.smoothing_matrix(p.n_components) if anneal is not None else None
    m, occ, gx, ess_sq, mean_ll = _batch_stats(batch, p, smoothing)
    denom = (occ + occupancy_floor)[:, None]
    d_mu = (gx - occ[:, None] * p.mu) / denom
    d_ls = 0.5 * (ess_sq / p.sigma2 - occ[:, None]) / denom
    d_w = (occ / m) - p.pi * (occ.sum() / m)
    if not (
        np.isfinite(mean_ll)
        and np.isfinite(d_w).all()
        and np.isfinite(d_mu).all()
        and np.isfinite(d_ls).all()
    ):
        raise NumericError("non-finite gradient in mixture training step")
    if grad_clip is not None:
        np.clip(d_w, -grad_clip, grad_clip, out=d_w)
        np.clip(d_mu, -grad_clip, grad_clip, out=d_mu)
        np.clip(d_ls, -grad_clip, grad_clip, out=d_ls)
    p.free_weights += lr * d_w
    p.mu += lr * d_mu
    p.log_sigma += lr * d_ls
    np.maximum(p.log_sigma, 0.5 * np.log(p.sigma2_min), out=p.log_sigma)
    if anneal is not None:
        anneal.advance()
    return mean_ll


def sample(
    p: GmmParams,
    control: np.ndarray | None,
    count: int,
    rng: np.random.Generator | int,
    spatial: tuple[int, int] = (1, 1),
) -> np.ndarray:
    """Draw ``count`` tensors of shape (H, W, D) from the mixture.

    Component choice per column follows the mixture weights, or the
    normalized ``control`` vector when given (one K-vector for all columns,
    or an (H, W, K) array per column). Values are clipped to [0, 1].
    """
    if count < 1:
        return np.zeros((0, spatial[0], spatial[1], p.dim))
    if isinstance(rng, int):
        rng = np.random.default_rng(rng)
    h, w = spatial
    k = p.n_components
    if control is None:
        probs = np.broadcast_to(p.pi, (h, w, k))
    else:
        control = np.asarray(control, dtype=float)
        if control.ndim == 1:
            if control.shape[0] != k:
                raise ShapeError(f"control length {control.shape[0]} != K={k}")
            control = np.broadcast_to(control, (h, w, k))
        elif control.shape != (h, w, k):
            raise ShapeError(f"control shape {control.shape} != {(h, w, k)}")
        if (control < 0).any():
            raise ControlError("control entries must be nonnegative")
        totals = control.sum(axis=-1)
        if (totals <= 0).any():
            raise ControlError("control must have positive mass in every column")
        probs = control / totals[..., None]
    sigma = np.sqrt(p.sigma2)
    out = np.empty((count, h, w, p.dim))
    for i in range(h):
        for j in range(w):
            ks = rng.choice(k, size=count, p=probs[i, j])
            noise = rng.standard_normal((count, p.dim))
            out[:, i, j, :] = p.mu[ks] + sigma[ks] * noise
    np.clip(out, 0.0, 1.0, out=out)
    return out
