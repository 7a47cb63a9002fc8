"""Token embeddings for command lines and behavior sequences.

Command text and technique sequences are embedded with a from-scratch
skip-gram model trained by negative sampling; a sentence vector is the
mean of its in-vocabulary token vectors.  Per-signature sentence vectors
are stacked into a fixed block layout and squeezed through a three-layer
autoencoder.  Short strings (paths, process names, signers) are hashed
into a tri-gram count vector with a bit-exact FNV-1a 64-bit hash.
"""

from __future__ import annotations

import io
import json
import re
import zipfile
from dataclasses import dataclass, field

import numpy as np

from .nn import Adam, Dense, DenseNetwork, mse_loss


class EmbedError(ValueError):
    pass


_IPV4 = re.compile(r"\b(?:\d{1,3}\.){3}\d{1,3}\b")
_DRIVE_PATH = re.compile(r"\b[a-z]:[\\/][^\s\"',]*")
_TOKEN = re.compile(r"\[(?:ip|num|hash)\]|[a-z0-9_]+")
_HEX = re.compile(r"^[0-9a-f]{16,}$")
_NUM = re.compile(r"^\d{2,}$")


def normalize_tokens(command_line: str) -> list[str]:
    """Lowercased tokens with volatile literals collapsed.

    IPv4 literals become "[ip]", integers of two or more digits "[num]",
    hex strings of sixteen or more characters "[hash]"; drive-letter
    paths are reduced to their basename before splitting.
    """
    text = command_line.lower()
    text = _IPV4.sub(" [ip] ", text)

    def _basename(match: re.Match) -> str:
        return " " + re.split(r"[\\/]", match.group(0))[-1] + " "

    text = _DRIVE_PATH.sub(_basename, text)
    out = []
    for tok in _TOKEN.findall(text):
        if tok in ("[ip]", "[num]", "[hash]"):
            out.append(tok)
        elif _HEX.match(tok):
            out.append("[hash]")
        elif _NUM.match(tok):
            out.append("[num]")
        else:
            out.append(tok)
    return out


@dataclass
class TokenCorpus:
    sentences: list
    vocabulary: dict          # token -> id
    counts: np.ndarray        # frequency per id

    @classmethod
    def build(cls, sentences: list) -> "TokenCorpus":
        vocab: dict = {}
        counts: list = []
        for sentence in sentences:
            for tok in sentence:
                idx = vocab.get(tok)
                if idx is None:
                    vocab[tok] = len(counts)
                    counts.append(1)
                else:
                    counts[idx] += 1
        return cls(sentences=list(sentences), vocabulary=vocab,
                   counts=np.asarray(counts, dtype=np.float64))


@dataclass
class EmbeddingModel:
    dimension: int
    window: int
    negatives: int
    vocabulary: dict
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    signature_tag: str = "behavior"
    epoch_losses: list = field(default_factory=list)


def _noise_cdf(counts: np.ndarray) -> np.ndarray:
    """Cumulative unigram^0.75 noise distribution for negative draws."""
    p = counts ** 0.75
    p /= p.sum()
    return np.cumsum(p)


def train_skipgram(corpus: TokenCorpus, dimension: int, window: int,
                   negatives: int, epochs: int = 5, seed: int = 0,
                   learning_rate: float = 0.025,
                   signature_tag: str = "behavior") -> EmbeddingModel:
    """Skip-gram with negative sampling; deterministic per seed.

    Learning rate decays linearly over all scheduled center words with a
    floor of 1e-4 of the initial rate.  The per-epoch mean pair loss is
    recorded on the returned model.
    """
    if not corpus.sentences or not corpus.vocabulary:
        raise EmbedError("empty corpus")
    if dimension < 1 or window < 1 or negatives < 1:
        raise EmbedError("dimension, window, and negatives must be >= 1")
    rng = np.random.default_rng(seed)
    v = len(corpus.vocabulary)
    syn0 = rng.uniform(-0.5 / dimension, 0.5 / dimension, size=(v, dimension))
    syn1 = np.zeros((v, dimension))
    cdf = _noise_cdf(corpus.counts)

    encoded = [np.array([corpus.vocabulary[t] for t in s], dtype=np.int64)
               for s in corpus.sentences if s]
    total_words = sum(len(s) for s in encoded) * epochs
    processed = 0
    epoch_losses = []
    for _ in range(epochs):
        loss_sum, pairs = 0.0, 0
        for sentence in encoded:
            n = len(sentence)
            for pos in range(n):
                lr = learning_rate * max(
                    1e-4, 1.0 - processed / max(total_words, 1))
                processed += 1
                center = sentence[pos]
                span = int(rng.integers(1, window + 1))
                lo, hi = max(0, pos - span), min(n, pos + span + 1)
                for ctx_pos in range(lo, hi):
                    if ctx_pos == pos:
                        continue
                    context = sentence[ctx_pos]
                    noise = np.searchsorted(cdf, rng.random(negatives))
                    targets = np.concatenate(([context], noise))
                    labels = np.zeros(negatives + 1)
                    labels[0] = 1.0
                    vecs = syn1[targets]
                    z = vecs @ syn0[center]
                    p = 1.0 / (1.0 + np.exp(-z))
                    loss_sum += float(
                        -np.log(np.clip(np.where(labels > 0, p, 1.0 - p),
                                        1e-12, None)).sum())
                    pairs += 1
                    g = (p - labels) * lr
                    grad_center = g @ vecs
                    syn1[targets] -= np.outer(g, syn0[center])
                    syn0[center] -= grad_center
        epoch_losses.append(loss_sum / max(pairs, 1))
    return EmbeddingModel(dimension=dimension, window=window,
                          negatives=negatives,
                          vocabulary=dict(corpus.vocabulary),
                          input_vectors=syn0, output_vectors=syn1,
                          signature_tag=signature_tag,
                          epoch_losses=epoch_losses)


def sentence_vector(model: EmbeddingModel, tokens: list) -> np.ndarray:
    """Mean input vector of in-vocabulary tokens; zeros when none match.

    Computed as a count-weighted sum over unique ids, so permutations of
    the input are bit-identical and a one-token sentence returns that
    token's vector exactly.
    """
    ids = [model.vocabulary[t] for t in tokens if t in model.vocabulary]
    if not ids:
        return np.zeros(model.dimension)
    unique, counts = np.unique(np.asarray(ids), return_counts=True)
    if len(unique) == 1:
        return model.input_vectors[unique[0]].copy()
    weighted = (model.input_vectors[unique] * counts[:, None]).sum(axis=0)
    return weighted / len(ids)


# ---------------------------------------------------------------------------
# Reduction autoencoder
# ---------------------------------------------------------------------------

@dataclass
class ReductionAutoencoder:
    """Exactly three dense layers: in -> mid -> out -> in.

    reduce() returns the middle (out-width) representation.
    """

    network: DenseNetwork

    def __post_init__(self):
        if len(self.network.layers) != 3:
            raise EmbedError("reduction autoencoder must have 3 layers")

    @property
    def widths(self) -> tuple[int, int, int]:
        layers = self.network.layers
        return (layers[0].w.shape[1], layers[0].w.shape[0],
                layers[1].w.shape[0])


def reduce(ae: ReductionAutoencoder, stacked: np.ndarray) -> np.ndarray:
    """Deterministic forward pass through the first two layers."""
    x = np.asarray(stacked, dtype=np.float64)
    d_in = ae.widths[0]
    if x.shape[-1] != d_in:
        raise EmbedError(f"input width {x.shape[-1]} != expected {d_in}")
    partial = DenseNetwork(ae.network.layers[:2])
    out, _ = partial.forward(x)
    return out


def reconstruct(ae: ReductionAutoencoder, stacked: np.ndarray) -> np.ndarray:
    out, _ = ae.network.forward(np.asarray(stacked, dtype=np.float64))
    return out


def train_reduction(vectors, widths: tuple[int, int, int], epochs: int = 30,
                    seed: int = 0, learning_rate: float = 1e-3,
                    batch_size: int = 64) -> ReductionAutoencoder:
    """Fit the reduction autoencoder by reconstruction MSE.

    The epoch-average loss is kept non-increasing (1e-6 jitter allowed)
    by backtracking: an epoch that raises the loss is rolled back and
    the learning rate halved.
    """
    data = np.asarray(vectors, dtype=np.float64)
    if data.ndim != 2 or len(data) < 1:
        raise EmbedError("train_reduction needs >= 1 vector")
    d_in, d_mid, d_out = widths
    if data.shape[1] != d_in:
        raise EmbedError("vector width does not match widths[0]")
    rng = np.random.default_rng(seed)
    net = DenseNetwork.create([d_in, d_mid, d_out, d_in],
                              ["tanh", "linear", "linear"], rng)
    opt = Adam(net.params(), lr=learning_rate)
    prev_loss = np.inf
    lr = learning_rate
    for _ in range(epochs):
        snapshot = [p.copy() for p in net.params()]
        order = rng.permutation(len(data))
        total, batches = 0.0, 0
        for start in range(0, len(data), batch_size):
            xb = data[order[start:start + batch_size]]
            out, cache = net.forward(xb)
            loss, dl = mse_loss(out, xb)
            grads, _ = net.backward(cache, dl)
            opt.step(net.params(), grads)
            total += loss
            batches += 1
        epoch_loss = total / batches
        if epoch_loss > prev_loss + 1e-6:
            for p, s in zip(net.params(), snapshot):
                p[...] = s
            lr *= 0.5
            opt = Adam(net.params(), lr=lr)
        else:
            prev_loss = epoch_loss
    return ReductionAutoencoder(network=net)


# ---------------------------------------------------------------------------
# Tri-gram featurizer
# ---------------------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    """FNV-1a 64-bit; fixed constants so vectors are portable."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _U64
    return h


def trigram_featurize(strings: list, buckets: int) -> np.ndarray:
    """L2-normalised hashed character tri-gram counts.

    Strings are lowercased; the all-zero vector is returned when no
    string yields a tri-gram.
    """
    if buckets < 1:
        raise EmbedError("buckets must be >= 1")
    vec = np.zeros(buckets)
    for s in strings:
        s = s.lower()
        for i in range(len(s) - 2):
            vec[fnv1a_64(s[i:i + 3].encode("utf-8")) % buckets] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------

_CONTAINER_VERSION = 1


@dataclass
class SessionEmbedder:
    """Everything featurization needs: per-signature command models (or a
    single shared one under the "" key), the behavior model, the
    reduction autoencoder, and the signature block order."""

    command_models: dict
    behavior_model: EmbeddingModel
    reduction: ReductionAutoencoder
    signature_order: list
    command_dim: int
    shared: bool = False

    def command_model_for(self, signature: str) -> EmbeddingModel | None:
        if self.shared:
            return self.command_models.get("")
        return self.command_models.get(signature)


def save_embedder(embedder: SessionEmbedder, path) -> None:
    arrays = {}
    meta_models = {}
    tags = {name: f"cmd{i}" for i, name in
            enumerate(sorted(embedder.command_models))}
    for name, prefix in tags.items():
        m = embedder.command_models[name]
        arrays[f"{prefix}_in"] = m.input_vectors
        arrays[f"{prefix}_out"] = m.output_vectors
        meta_models[name] = {
            "prefix": prefix, "dimension": m.dimension, "window": m.window,
            "negatives": m.negatives, "vocabulary": m.vocabulary,
            "signature_tag": m.signature_tag,
            "epoch_losses": m.epoch_losses,
        }
    b = embedder.behavior_model
    arrays["beh_in"] = b.input_vectors
    arrays["beh_out"] = b.output_vectors
    for i, layer in enumerate(embedder.reduction.network.layers):
        arrays[f"red_w{i}"] = layer.w
        arrays[f"red_b{i}"] = layer.b
    meta = {
        "container_version": _CONTAINER_VERSION,
        "command_models": meta_models,
        "behavior": {"dimension": b.dimension, "window": b.window,
                     "negatives": b.negatives, "vocabulary": b.vocabulary,
                     "signature_tag": b.signature_tag,
                     "epoch_losses": b.epoch_losses},
        "reduction_acts": [l.act for l in embedder.reduction.network.layers],
        "signature_order": embedder.signature_order,
        "command_dim": embedder.command_dim,
        "shared": embedder.shared,
    }
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("meta.json", json.dumps(meta, sort_keys=True))
        zf.writestr("arrays.npz", buf.getvalue())


def load_embedder(path) -> SessionEmbedder:
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json"))
        with zf.open("arrays.npz") as fh:
            data = np.load(io.BytesIO(fh.read()))
            arrays = {k: data[k] for k in data.files}
    if meta["container_version"] != _CONTAINER_VERSION:
        raise EmbedError("unsupported embedder container version")
    command_models = {}
    for name, m in meta["command_models"].items():
        command_models[name] = EmbeddingModel(
            dimension=m["dimension"], window=m["window"],
            negatives=m["negatives"], vocabulary=m["vocabulary"],
            input_vectors=arrays[f"{m['prefix']}_in"],
            output_vectors=arrays[f"{m['prefix']}_out"],
            signature_tag=m["signature_tag"],
            epoch_losses=m["epoch_losses"])
    b = meta["behavior"]
    behavior = EmbeddingModel(
        dimension=b["dimension"], window=b["window"],
        negatives=b["negatives"], vocabulary=b["vocabulary"],
        input_vectors=arrays["beh_in"], output_vectors=arrays["beh_out"],
        signature_tag=b["signature_tag"], epoch_losses=b["epoch_losses"])
    layers = [Dense(arrays[f"red_w{i}"], arrays[f"red_b{i}"], act)
              for i, act in enumerate(meta["reduction_acts"])]
    return SessionEmbedder(
        command_models=command_models, behavior_model=behavior,
        reduction=ReductionAutoencoder(DenseNetwork(layers)),
        signature_order=meta["signature_order"],
        command_dim=meta["command_dim"], shared=meta["shared"])
