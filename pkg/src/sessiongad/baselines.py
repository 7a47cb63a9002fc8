"""Comparison detectors: isolation forest, mixture-of-Gaussian-mixtures,
variational autoencoder, and the adversarial autoencoder with tail
filtering disabled."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gad import (
    DivergenceError,
    GadConfig,
    GroupMatrix,
    GroupScore,
    _expand_mask,
    _stack,
    score as gad_score,
    train as gad_train,
)
from .nn import Adam, DenseNetwork, check_finite, mse_loss

_EULER_GAMMA = 0.5772156649015329


def _harmonic(n: int) -> float:
    if n <= 0:
        return 0.0
    if n < 1024:
        return float(np.sum(1.0 / np.arange(1, n + 1)))
    return float(np.log(n) + _EULER_GAMMA + 0.5 / n)


def average_path_normalizer(n: int) -> float:
    """c(n): expected isolation path length in a subsample of size n."""
    if n <= 1:
        return 0.0
    return 2.0 * _harmonic(n - 1) - 2.0 * (n - 1) / n


# ---------------------------------------------------------------------------
# Isolation forest
# ---------------------------------------------------------------------------

@dataclass
class _TreeNode:
    size: int
    feature: int = -1
    split: float = 0.0
    left: "._TreeNode" = None
    right: "._TreeNode" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class IsolationForest:
    trees: list
    subsample: int

    @property
    def normalizer(self) -> float:
        return average_path_normalizer(self.subsample)


def _grow_tree(points: np.ndarray, depth: int, limit: int,
               rng: np.random.Generator) -> _TreeNode:
    n = len(points)
    if n <= 1 or depth >= limit:
        return _TreeNode(size=n)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    candidates = np.flatnonzero(hi > lo)
    if len(candidates) == 0:
        return _TreeNode(size=n)
    feature = int(rng.choice(candidates))
    split = float(rng.uniform(lo[feature], hi[feature]))
    mask = points[:, feature] < split
    if not mask.any() or mask.all():
        # degenerate split (split landed on the boundary); isolate one side
        mask = points[:, feature] <= lo[feature]
        if not mask.any() or mask.all():
            return _TreeNode(size=n)
    return _TreeNode(
        size=n, feature=feature, split=split,
        left=_grow_tree(points[mask], depth + 1, limit, rng),
        right=_grow_tree(points[~mask], depth + 1, limit, rng))


def iforest_fit(points, trees: int = 100, subsample: int = 256,
                seed: int = 0) -> IsolationForest:
    """Standard randomized isolation trees; deterministic per seed."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("isolation forest needs >= 2 points")
    rng = np.random.default_rng(seed)
    psi = min(subsample, len(pts))
    limit = int(np.ceil(np.log2(psi)))
    grown = []
    for _ in range(trees):
        idx = rng.choice(len(pts), size=psi, replace=False)
        grown.append(_grow_tree(pts[idx], 0, limit, rng))
    return IsolationForest(trees=grown, subsample=psi)


def _path_length(node: _TreeNode, point: np.ndarray, depth: int) -> float:
    while not node.is_leaf:
        depth += 1
        node = node.left if point[node.feature] < node.split else node.right
    return depth + average_path_normalizer(node.size)


def iforest_score(forest: IsolationForest, point) -> float:
    """Anomaly score 2^(-E[h]/c(n)) in (0, 1); higher = more anomalous."""
    p = np.asarray(point, dtype=np.float64)
    mean_path = float(np.mean([_path_length(t, p, 0) for t in forest.trees]))
    return float(2.0 ** (-mean_path / forest.normalizer))


def iforest_scores(forest: IsolationForest, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return np.array([iforest_score(forest, p) for p in pts])


def iforest_group_scores(groups: list, trees: int = 100, subsample: int = 256,
                         seed: int = 0, mode: str = "points") -> np.ndarray:
    """Group scores from an isolation forest in one of two modes.

    ``points``: fit on the flattened member points and max-pool member
    scores per group.  ``matrix``: fit on whole-group concatenated padded
    vectors, one point per group.
    """
    if mode == "points":
        flat = np.vstack(groups)
        forest = iforest_fit(flat, trees=trees, subsample=subsample, seed=seed)
        out = []
        for g in groups:
            out.append(float(np.max(iforest_scores(forest, g))))
        return np.asarray(out)
    if mode == "matrix":
        n_max = max(len(g) for g in groups)
        width = groups[0].shape[1]
        rows = np.zeros((len(groups), n_max * width))
        for i, g in enumerate(groups):
            rows[i, : g.size] = np.asarray(g).reshape(-1)
        forest = iforest_fit(rows, trees=trees, subsample=subsample, seed=seed)
        return iforest_scores(forest, rows)
    raise ValueError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# Mixture of Gaussian mixtures
# ---------------------------------------------------------------------------

_COV_FLOOR = 1e-6


@dataclass
class MgmModel:
    """L shared diagonal Gaussians, per-group mixing proportions, and T
    genre weight vectors (T = 1 collapses to a single genre)."""

    means: np.ndarray          # (L, D)
    variances: np.ndarray      # (L, D)
    group_mixing: np.ndarray   # (M, L) training-set proportions
    genre_weights: np.ndarray  # (T, L)
    log_likelihoods: list = field(default_factory=list)
    floored: bool = False


def _log_gauss(x: np.ndarray, means: np.ndarray,
               variances: np.ndarray) -> np.ndarray:
    """(N, L) log densities of diagonal Gaussians."""
    n, d = x.shape
    out = np.empty((n, len(means)))
    for l in range(len(means)):
        diff = x - means[l]
        out[:, l] = (-0.5 * (diff * diff / variances[l]).sum(axis=1)
                     - 0.5 * np.log(2.0 * np.pi * variances[l]).sum())
    return out


def _responsibilities(logp: np.ndarray, log_mix: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Posterior member responsibilities and per-member log evidence."""
    joint = logp + log_mix
    peak = joint.max(axis=1, keepdims=True)
    w = np.exp(joint - peak)
    total = w.sum(axis=1, keepdims=True)
    return w / total, (np.log(total) + peak)[:, 0]


def mgm_fit(groups: list, t_genres: int = 1, l_components: int = 4,
            epochs: int = 50, seed: int = 0) -> MgmModel:
    """EM over shared components with per-group mixing proportions.

    The total data log-likelihood is non-decreasing across iterations
    (up to the covariance floor, which triggers a warning flag).
    """
    if len(groups) < 1 or l_components < 1:
        raise ValueError("need >= 1 group and >= 1 component")
    arrs = [np.asarray(g, dtype=np.float64) for g in groups]
    x = np.vstack(arrs)
    owner = np.concatenate([np.full(len(g), i) for i, g in enumerate(arrs)])
    n, d = x.shape
    m = len(arrs)
    rng = np.random.default_rng(seed)

    # init: random member assignment to components
    assign = rng.integers(0, l_components, size=n)
    means = np.empty((l_components, d))
    variances = np.empty((l_components, d))
    global_var = x.var(axis=0) + _COV_FLOOR
    for l in range(l_components):
        chosen = x[assign == l]
        means[l] = chosen.mean(axis=0) if len(chosen) else x[rng.integers(n)]
        variances[l] = chosen.var(axis=0) + _COV_FLOOR if len(chosen) > 1 \
            else global_var
    mixing = np.full((m, l_components), 1.0 / l_components)

    floored = False
    lls = []
    for _ in range(epochs):
        logp = _log_gauss(x, means, variances)
        log_mix = np.log(np.maximum(mixing[owner], 1e-300))
        resp, evidence = _responsibilities(logp, log_mix)
        lls.append(float(evidence.sum()))

        # M-step: shared components from all members
        weight = resp.sum(axis=0)
        for l in range(l_components):
            w = resp[:, l]
            total = weight[l]
            if total < 1e-12:
                continue
            means[l] = (w[:, None] * x).sum(axis=0) / total
            diff = x - means[l]
            var = (w[:, None] * diff * diff).sum(axis=0) / total
            if (var < _COV_FLOOR).any():
                floored = True
            variances[l] = np.maximum(var, _COV_FLOOR)
        # per-group mixing proportions
        for g in range(m):
            rows = resp[owner == g]
            mixing[g] = rows.mean(axis=0)

    genre = mixing.mean(axis=0, keepdims=True)
    genre_weights = np.repeat(genre, t_genres, axis=0)
    return MgmModel(means=means, variances=variances, group_mixing=mixing,
                    genre_weights=genre_weights, log_likelihoods=lls,
                    floored=floored)


def infer_mixing(model: MgmModel, group, iterations: int = 25) -> np.ndarray:
    """Mixing proportions of a group under frozen shared components."""
    x = np.asarray(group, dtype=np.float64)
    logp = _log_gauss(x, model.means, model.variances)
    mixing = np.full(len(model.means), 1.0 / len(model.means))
    for _ in range(iterations):
        resp, _ = _responsibilities(logp, np.log(np.maximum(mixing, 1e-300)))
        mixing = resp.mean(axis=0)
    return mixing


def kl_divergence(p, q) -> float:
    """KL(p || q) on the simplex with 0 * log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))).sum())


def mgm_score(model: MgmModel, group) -> float:
    """KL divergence of the group's inferred mixing proportions from the
    nearest genre weight vector; higher = more anomalous."""
    mixing = infer_mixing(model, group)
    return min(kl_divergence(mixing, genre) for genre in model.genre_weights)


# ---------------------------------------------------------------------------
# Variational autoencoder
# ---------------------------------------------------------------------------

@dataclass
class VaeModel:
    encoder: DenseNetwork      # outputs (mu, log sigma^2), width 2K
    decoder: DenseNetwork
    latent_dim: int
    config: GadConfig
    history: list = field(default_factory=list)


def gaussian_kl(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) summed over dimensions; >= 0."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return float(0.5 * (mu * mu + np.exp(logvar) - logvar - 1.0).sum())


_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def vae_train(groups: list[GroupMatrix], config: GadConfig) -> VaeModel:
    """Standard VAE on group matrices; masked unit-variance Gaussian
    reconstruction likelihood minus the latent KL (ELBO ascent)."""
    if len(groups) < 2:
        raise ValueError("training needs at least 2 groups")
    width = groups[0].width
    d_in = groups[0].n_max * width
    k = config.latent_dim
    rng = np.random.default_rng(config.seed)
    hidden = list(config.hidden)
    encoder = DenseNetwork.create([d_in] + hidden + [2 * k],
                                  ["elu"] * len(hidden) + ["linear"], rng)
    decoder = DenseNetwork.create([k] + hidden[::-1] + [d_in],
                                  ["elu"] * len(hidden) + ["sigmoid"], rng)
    opt = Adam(encoder.params() + decoder.params(), lr=config.learning_rate)

    xs_all, masks_all = _stack(groups)
    emask_all = _expand_mask(masks_all, width)
    m = len(groups)
    bs = min(config.batch_size, m)
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(m)
        elbo_sum, batches = 0.0, 0
        for start in range(0, m, bs):
            idx = order[start:start + bs]
            xs, emask = xs_all[idx], emask_all[idx]
            count = emask.sum()

            h, cache_e = encoder.forward(xs)
            mu, logvar = h[:, :k], h[:, k:]
            eps = rng.standard_normal(mu.shape)
            sigma = np.exp(0.5 * logvar)
            z = mu + sigma * eps
            xh, cache_d = decoder.forward(z)

            # negative ELBO per real entry
            diff = (xh - xs) * emask
            nll = float((0.5 * diff * diff).sum() + _HALF_LOG_2PI * count)
            kl = float(0.5 * (mu * mu + np.exp(logvar) - logvar - 1.0).sum())
            loss = (nll + kl) / count

            dxh = diff / count
            g_dec, dz = decoder.backward(cache_d, dxh)
            dmu = dz + mu / count
            dlogvar = dz * eps * 0.5 * sigma + 0.5 * (np.exp(logvar) - 1.0) / count
            g_enc, _ = encoder.backward(cache_e, np.hstack([dmu, dlogvar]))
            opt.step(encoder.params() + decoder.params(), g_enc + g_dec)

            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            elbo_sum += -loss
            batches += 1
        if not check_finite(encoder.params() + decoder.params()):
            raise DivergenceError(epoch)
        history.append(elbo_sum / max(batches, 1))
    return VaeModel(encoder=encoder, decoder=decoder, latent_dim=k,
                    config=config, history=history)


def vae_score(model: VaeModel, group: GroupMatrix, samples: int = 16,
              seed: int = 0) -> float:
    """Negative mean reconstruction log-likelihood per real entry,
    averaged over latent samples; higher = more anomalous."""
    rng = np.random.default_rng(seed)
    k = model.latent_dim
    h, _ = model.encoder.forward(group.x)
    mu, logvar = h[:k], h[k:]
    sigma = np.exp(0.5 * logvar)
    emask = np.repeat(group.mask, group.width)
    count = emask.sum()
    total = 0.0
    for _ in range(samples):
        z = mu + sigma * rng.standard_normal(k)
        xh, _ = model.decoder.forward(z)
        diff = (xh - group.x) * emask
        total += float((0.5 * diff * diff).sum() + _HALF_LOG_2PI * count)
    return total / (samples * count)


# ---------------------------------------------------------------------------
# Plain adversarial autoencoder (tail filtering disabled)
# ---------------------------------------------------------------------------

def aae_plain(groups: list[GroupMatrix], config: GadConfig
              ) -> list[GroupScore]:
    """Identical training to the filtered detector with alpha forced to 0,
    so every latent is retained when the reference is built."""
    plain = GadConfig.from_dict({**config.to_dict(), "alpha": 0.0})
    model = gad_train(groups, plain)
    return gad_score(model, groups)
