"""Adversarially regularised group anomaly detector.

Each group of member feature vectors is concatenated (padded or
subsampled to a fixed capacity) and fed to an autoencoder whose latent
code is shaped toward a standard Gaussian by a discriminator.  Training
adds an intra-group triplet loss on latent encodings of the individual
members.  After training, the most extreme tail of latent codes (by
distance from the latent mean) is excluded and the kernel medoid of the
remainder becomes the reference; a group's anomaly score is its latent
distance from that reference, optionally plus a reconstruction term.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field, fields

import numpy as np

from .nn import Adam, Dense, DenseNetwork, bce_loss, check_finite, mse_loss


class GadError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        super().__init__(f"training diverged at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class GroupMatrix:
    """One group's concatenated member vectors plus a real-slot mask.

    ``x`` has width exactly n_max * width; slot i holds member i (in
    timestamp order) or zeros when the mask marks it as padding.
    """

    key: str
    x: np.ndarray
    mask: np.ndarray
    n_max: int
    width: int
    techniques: dict | None = None

    def members(self) -> np.ndarray:
        """Real member vectors, shape (n, width)."""
        slots = self.x.reshape(self.n_max, self.width)
        return slots[self.mask > 0.5]


@dataclass
class GadConfig:
    """Hyperparameters for training and scoring.

    ``alpha`` is the tail percentile excluded before building the
    reference (0 disables filtering and retains every latent);
    ``spread`` is the kernel bandwidth used for the medoid.
    """

    alpha: float = 10.0
    spread: float = 10.0
    lambda_margin: float = 1.0
    group_loss_weight: float = 1.0
    recon_score_weight: float = 0.0
    latent_dim: int = 60
    hidden: tuple = (340, 120)
    disc_hidden: int = 60
    n_max: int = 8
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 7

    def __post_init__(self):
        if not 0.0 <= self.alpha < 100.0:
            raise GadError("alpha must lie in [0, 100)")
        if self.spread <= 0:
            raise GadError("spread must be positive")
        if self.lambda_margin < 0:
            raise GadError("lambda_margin must be >= 0")
        if self.latent_dim < 1 or self.n_max < 1:
            raise GadError("latent_dim and n_max must be >= 1")

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GadConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass(frozen=True)
class GroupScore:
    key: str
    score: float
    rank: int
    techniques: dict | None = None


@dataclass
class GadModel:
    encoder: DenseNetwork
    decoder: DenseNetwork
    discriminator: DenseNetwork
    config: GadConfig
    latent_mean: np.ndarray
    threshold: float
    reference: np.ndarray
    reference_key: str
    train_keys: list = field(default_factory=list)
    train_latents: np.ndarray | None = None
    history: dict = field(default_factory=dict)

    def save(self, path) -> None:
        save_model(self, path)

    @classmethod
    def load(cls, path) -> "GadModel":
        return load_model(path)


def build_group_matrix(key: str, members, n_max: int, seed: int,
                       techniques: dict | None = None) -> GroupMatrix:
    """Pad or subsample member vectors into a fixed-capacity matrix.

    Members must arrive in timestamp order and keep that order: when
    there are more than n_max, a seeded uniform subsample (without
    replacement) is taken and re-sorted by original position.
    """
    arr = np.asarray(members, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise GadError(f"group {key!r}: need >= 1 member vector")
    n, width = arr.shape
    if n > n_max:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(n, size=n_max, replace=False))
        arr = arr[keep]
        n = n_max
    x = np.zeros(n_max * width)
    x[: n * width] = arr.reshape(-1)
    mask = np.zeros(n_max)
    mask[:n] = 1.0
    return GroupMatrix(key=key, x=x, mask=mask, n_max=n_max, width=width,
                       techniques=techniques)


def kernel(z_i: np.ndarray, z_j: np.ndarray, spread: float) -> float:
    """exp(-||z_i - z_j||^2 / spread); 1 exactly when the inputs match."""
    if spread <= 0:
        raise GadError("spread must be positive")
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if z_i.shape != z_j.shape:
        raise GadError("kernel inputs must share a shape")
    d2 = float(((z_i - z_j) ** 2).sum())
    return float(np.exp(-d2 / spread))


def pairwise_kernel_max(latents: np.ndarray, spread: float) -> float:
    """Largest off-diagonal kernel value; diagnostic only.

    This is the raw pairwise statistic behind the reference construction;
    the medoid (group_reference) is what scoring actually uses.
    """
    z = np.asarray(latents, dtype=np.float64)
    if len(z) < 2:
        return 1.0
    d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(axis=2)
    off = d2[~np.eye(len(z), dtype=bool)]
    return float(np.exp(-off.min() / spread))


def group_loss(anchor, same_centroid, other_centroid, lambda_margin: float
               ) -> float:
    """Triplet hinge max(0, margin + d_same - d_other), Euclidean d."""
    a = np.asarray(anchor, dtype=np.float64)
    d_same = float(np.linalg.norm(a - np.asarray(same_centroid)))
    d_other = float(np.linalg.norm(a - np.asarray(other_centroid)))
    return max(0.0, lambda_margin + d_same - d_other)


def filter_tail(latents: np.ndarray, alpha: float
                ) -> tuple[np.ndarray, float]:
    """Drop the most extreme alpha percent of latents.

    Distances are measured from the latent mean; the threshold is the
    (100 - alpha)-th percentile (linear interpolation) and latents at or
    below it are retained.  alpha = 0 retains everything.
    """
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or len(z) < 1:
        raise GadError("filter_tail needs a non-empty 2-D latent array")
    if not 0.0 <= alpha < 100.0:
        raise GadError("alpha must lie in [0, 100)")
    r = np.linalg.norm(z - z.mean(axis=0), axis=1)
    threshold = float(np.percentile(r, 100.0 - alpha, method="linear"))
    return z[r <= threshold], threshold


def group_reference(latents: np.ndarray, spread: float,
                    keys: list | None = None) -> np.ndarray:
    """Kernel medoid of the retained latents.

    Returns the latent maximising the summed kernel similarity to all
    retained latents; exact ties go to the lowest group key (or lowest
    index when keys are not supplied).
    """
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or len(z) < 1:
        raise GadError("group_reference needs >= 1 retained latent "
                       "(tail filtering too aggressive)")
    idx = _medoid_index(z, spread, keys)
    return z[idx].copy()


def _medoid_index(z: np.ndarray, spread: float, keys=None) -> int:
    d2 = ((z[:, None, :] - z[None, :, :]) ** 2).sum(axis=2)
    sums = np.exp(-d2 / spread).sum(axis=1)
    best = sums.max()
    candidates = np.flatnonzero(sums == best)
    if len(candidates) == 1 or keys is None:
        return int(candidates[0])
    return int(min(candidates, key=lambda i: keys[i]))


def _expand_mask(masks: np.ndarray, width: int) -> np.ndarray:
    """Per-slot masks (B, n_max) -> per-entry masks (B, n_max * width)."""
    return np.repeat(masks, width, axis=1)


def _stack(groups: list[GroupMatrix]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([g.x for g in groups])
    masks = np.stack([g.mask for g in groups])
    return xs, masks


def _singleton_batch(groups: list[GroupMatrix]):
    """Zero-padded singleton matrices for every real member in the batch.

    Returns (matrix of singleton inputs, member->group index array).
    """
    width_total = groups[0].n_max * groups[0].width
    rows = []
    owner = []
    for gi, g in enumerate(groups):
        for m in g.members():
            row = np.zeros(width_total)
            row[: g.width] = m
            rows.append(row)
            owner.append(gi)
    return np.stack(rows), np.asarray(owner)


def _group_loss_batch(f: np.ndarray, owner: np.ndarray, neg_group: np.ndarray,
                      lambda_margin: float) -> tuple[float, np.ndarray]:
    """Mean triplet hinge over anchors and its gradient w.r.t. f.

    f holds singleton-member latents; owner maps each row to its group
    (within-batch index); neg_group gives each group's sampled negative.
    Centroids include the anchor itself.
    """
    n_groups = int(owner.max()) + 1
    counts = np.bincount(owner, minlength=n_groups).astype(float)
    centroids = np.zeros((n_groups, f.shape[1]))
    np.add.at(centroids, owner, f)
    centroids /= counts[:, None]

    grad = np.zeros_like(f)
    cgrad = np.zeros_like(centroids)
    total = 0.0
    n_anchors = len(f)
    for i in range(n_anchors):
        g = owner[i]
        o = neg_group[g]
        ds_vec = f[i] - centroids[g]
        do_vec = f[i] - centroids[o]
        d_same = float(np.linalg.norm(ds_vec))
        d_other = float(np.linalg.norm(do_vec))
        hinge = lambda_margin + d_same - d_other
        if hinge <= 0.0:
            continue
        total += hinge
        if d_same > 0:
            u = ds_vec / d_same
            grad[i] += u
            cgrad[g] -= u
        if d_other > 0:
            v = do_vec / d_other
            grad[i] -= v
            cgrad[o] += v
    # distribute centroid gradients back to their member latents
    grad += cgrad[owner] / counts[owner][:, None]
    return total / n_anchors, grad / n_anchors


# relative strength of the adversarial updates
_DISC_LR_MULT = 1.0
_GEN_LR_MULT = 1.0


def train(groups: list[GroupMatrix], config: GadConfig) -> GadModel:
    """Train the adversarial autoencoder and build the scoring reference.

    Per batch: (a) reconstruction (masked MSE) plus the weighted
    intra-group triplet loss updates encoder and decoder; (b) the
    discriminator learns to separate Gaussian prior samples from encoder
    outputs; (c) the encoder is updated to fool the discriminator.
    """
    if len(groups) < 2:
        raise GadError("training needs at least 2 groups")
    widths = {(g.n_max, g.width) for g in groups}
    if len(widths) != 1:
        raise GadError("groups have inconsistent widths")
    n_max, width = widths.pop()
    if n_max != config.n_max:
        raise GadError(f"groups built with n_max={n_max}, "
                       f"config has {config.n_max}")
    d_in = n_max * width
    k = config.latent_dim
    rng = np.random.default_rng(config.seed)

    hidden = list(config.hidden)
    encoder = DenseNetwork.create([d_in] + hidden + [k],
                                  ["elu"] * len(hidden) + ["linear"], rng)
    decoder = DenseNetwork.create([k] + hidden[::-1] + [d_in],
                                  ["elu"] * len(hidden) + ["sigmoid"], rng)
    discriminator = DenseNetwork.create([k, config.disc_hidden, 1],
                                        ["tanh", "sigmoid"], rng)

    opt_rec = Adam(encoder.params() + decoder.params(), lr=config.learning_rate)
    opt_disc = Adam(discriminator.params(),
                    lr=config.learning_rate * _DISC_LR_MULT)
    opt_gen = Adam(encoder.params(), lr=config.learning_rate * _GEN_LR_MULT)

    history = {"reconstruction": [], "group": [], "discriminator": [],
               "generator": [], "disc_accuracy": []}
    m = len(groups)
    bs = min(config.batch_size, m)

    for epoch in range(config.epochs):
        order = rng.permutation(m)
        sums = {key: 0.0 for key in history}
        n_batches = 0
        for start in range(0, m, bs):
            batch_idx = order[start:start + bs]
            if len(batch_idx) < 2:
                continue  # triplet negatives need >= 2 groups in the batch
            batch = [groups[i] for i in batch_idx]
            xs, masks = _stack(batch)
            emask = _expand_mask(masks, width)

            # (a) reconstruction + intra-group triplet loss
            z, cache_e = encoder.forward(xs)
            xh, cache_d = decoder.forward(z)
            l_rec, dxh = mse_loss(xh, xs, emask)
            g_dec, dz = decoder.backward(cache_d, dxh)
            g_enc, _ = encoder.backward(cache_e, dz)

            l_grp = 0.0
            if config.group_loss_weight > 0:
                s_in, owner = _singleton_batch(batch)
                f, cache_s = encoder.forward(s_in)
                n_in_batch = len(batch)
                neg = np.empty(n_in_batch, dtype=int)
                for gi in range(n_in_batch):
                    pick = int(rng.integers(n_in_batch - 1))
                    neg[gi] = pick + 1 if pick >= gi else pick
                l_grp, df = _group_loss_batch(f, owner, neg,
                                              config.lambda_margin)
                g_enc2, _ = encoder.backward(
                    cache_s, config.group_loss_weight * df)
                g_enc = [a + b for a, b in zip(g_enc, g_enc2)]

            opt_rec.step(encoder.params() + decoder.params(), g_enc + g_dec)

            # (b) discriminator: prior (label 1) vs encoder output (label 0)
            z_fake, _ = encoder.forward(xs)
            z_prior = rng.standard_normal((len(batch), k))
            d_in_batch = np.vstack([z_prior, z_fake])
            targets = np.vstack([np.ones((len(batch), 1)),
                                 np.zeros((len(batch), 1))])
            d_out, cache_disc = discriminator.forward(d_in_batch)
            l_disc, dd = bce_loss(d_out, targets)
            g_disc, _ = discriminator.backward(cache_disc, dd)
            opt_disc.step(discriminator.params(), g_disc)
            acc = float(((d_out > 0.5) == (targets > 0.5)).mean())

            # (c) generator: encoder fools the discriminator
            z_g, cache_g = encoder.forward(xs)
            d_out, cache_disc = discriminator.forward(z_g)
            l_gen, dd = bce_loss(d_out, np.ones_like(d_out))
            _, dz_g = discriminator.backward(cache_disc, dd)
            g_gen, _ = encoder.backward(cache_g, dz_g)
            opt_gen.step(encoder.params(), g_gen)

            losses = (l_rec, l_grp, l_disc, l_gen, acc)
            if not all(np.isfinite(v) for v in losses):
                raise DivergenceError(epoch)
            for key, v in zip(history, losses):
                sums[key] += v
            n_batches += 1

        if not check_finite(encoder.params() + decoder.params()
                            + discriminator.params()):
            raise DivergenceError(epoch)
        for key in history:
            history[key].append(sums[key] / max(n_batches, 1))

    xs, _ = _stack(groups)
    latents, _ = encoder.forward(xs)
    mu = latents.mean(axis=0)
    r = np.linalg.norm(latents - mu, axis=1)
    threshold = float(np.percentile(r, 100.0 - config.alpha, method="linear"))
    keep = r <= threshold
    kept = latents[keep]
    kept_keys = [g.key for g, flag in zip(groups, keep) if flag]
    if len(kept) == 0:
        raise GadError("tail filtering retained no latents; lower alpha")
    ref_idx = _medoid_index(kept, config.spread, kept_keys)

    return GadModel(
        encoder=encoder, decoder=decoder, discriminator=discriminator,
        config=config, latent_mean=mu, threshold=threshold,
        reference=kept[ref_idx].copy(), reference_key=kept_keys[ref_idx],
        train_keys=[g.key for g in groups], train_latents=latents,
        history=history)


def score(model: GadModel, groups: list[GroupMatrix]) -> list[GroupScore]:
    """Latent distance from the reference, plus an optional masked
    reconstruction term; sorted descending, ranks 1..M (ties by key)."""
    if not groups:
        return []
    width = groups[0].width
    xs, masks = _stack(groups)
    if xs.shape[1] != model.encoder.width_in:
        raise GadError("group width does not match the trained model")
    z, _ = model.encoder.forward(xs)
    s = np.linalg.norm(z - model.reference, axis=1)
    beta = model.config.recon_score_weight
    if beta > 0:
        xh, _ = model.decoder.forward(z)
        emask = _expand_mask(masks, width)
        for i in range(len(groups)):
            rec, _ = mse_loss(xh[i], xs[i], emask[i])
            s[i] += beta * rec
    order = sorted(range(len(groups)), key=lambda i: (-s[i], groups[i].key))
    return [GroupScore(key=groups[i].key, score=float(s[i]), rank=rank,
                       techniques=groups[i].techniques)
            for rank, i in enumerate(order, start=1)]


_CONTAINER_VERSION = 1


def save_model(model: GadModel, path) -> None:
    """Versioned binary container; round-trips bit-exactly."""
    arrays = {"latent_mean": model.latent_mean, "reference": model.reference}
    nets = {"enc": model.encoder, "dec": model.decoder,
            "disc": model.discriminator}
    net_meta = {}
    for tag, net in nets.items():
        net_meta[tag] = [layer.act for layer in net.layers]
        for i, layer in enumerate(net.layers):
            arrays[f"{tag}_w{i}"] = layer.w
            arrays[f"{tag}_b{i}"] = layer.b
    if model.train_latents is not None:
        arrays["train_latents"] = model.train_latents
    meta = {
        "container_version": _CONTAINER_VERSION,
        "config": model.config.to_dict(),
        "threshold": model.threshold,
        "reference_key": model.reference_key,
        "train_keys": model.train_keys,
        "history": model.history,
        "activations": net_meta,
    }
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("meta.json", json.dumps(meta, sort_keys=True))
        zf.writestr("arrays.npz", buf.getvalue())


def load_model(path) -> GadModel:
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json"))
        with zf.open("arrays.npz") as fh:
            data = np.load(io.BytesIO(fh.read()))
            arrays = {key: data[key] for key in data.files}
    if meta["container_version"] != _CONTAINER_VERSION:
        raise GadError(
            f"unsupported model container version {meta['container_version']}")
    nets = {}
    for tag in ("enc", "dec", "disc"):
        layers = []
        for i, act in enumerate(meta["activations"][tag]):
            layers.append(Dense(arrays[f"{tag}_w{i}"],
                                arrays[f"{tag}_b{i}"], act))
        nets[tag] = DenseNetwork(layers)
    return GadModel(
        encoder=nets["enc"], decoder=nets["dec"], discriminator=nets["disc"],
        config=GadConfig.from_dict(meta["config"]),
        latent_mean=arrays["latent_mean"], threshold=meta["threshold"],
        reference=arrays["reference"], reference_key=meta["reference_key"],
        train_keys=meta["train_keys"],
        train_latents=arrays.get("train_latents"),
        history=meta["history"])
