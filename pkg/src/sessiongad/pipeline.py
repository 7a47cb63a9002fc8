"""File-format glue between the pipeline stages.

Each stage reads and writes only the documented formats.  Every textual
artifact starts with a header line carrying the tool version and the
effective-configuration hash, so outputs are traceable and a rerun with
identical inputs is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import sys
from datetime import date, timedelta

import numpy as np

from . import __version__
from .config import PipelineConfig
from .embed import (
    SessionEmbedder,
    TokenCorpus,
    load_embedder,
    normalize_tokens,
    save_embedder,
    train_reduction,
    train_skipgram,
)
from .features import (
    FeatureLayout,
    PopulationIndex,
    PrevalenceStats,
    member_vectors,
)
from .gad import GadConfig, GadModel, GroupMatrix, build_group_matrix
from .gad import score as gad_score
from .gad import train as gad_train
from .ingest import MitreMapping, event_to_json, group_sessions, parse_events
from .metrics import auprc, auroc
from .synth import SyntheticConfig, gen_events, gen_vectors

_EPOCH = date(1970, 1, 1)


class DataError(ValueError):
    """Input files are missing, malformed, or not joinable."""


def day_to_iso(day: int) -> str:
    return (_EPOCH + timedelta(days=int(day))).isoformat()


def iso_to_day(text: str) -> int:
    return (date.fromisoformat(text) - _EPOCH).days


def header_line(config: PipelineConfig) -> str:
    return json.dumps({"header": {"tool": "sessiongad",
                                  "version": __version__,
                                  "config": config.digest()}})


def _read_jsonl(path) -> list:
    rows = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.strip()
                if not line:
                    continue
                obj = json.loads(line)
                if "header" in obj:
                    continue
                rows.append(obj)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSONL: {exc}") from exc
    return rows


def _write_lines(path, config: PipelineConfig, lines) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header_line(config) + "\n")
        for line in lines:
            fh.write(line + "\n")


def group_seed(base_seed: int, key: str) -> int:
    """Stable per-group seed independent of hash randomisation."""
    digest = hashlib.sha256(f"{base_seed}:{key}".encode("utf-8")).hexdigest()
    return int(digest[:15], 16)


def synthetic_config(config: PipelineConfig) -> SyntheticConfig:
    return SyntheticConfig(
        groups=config["gen.groups"],
        anomaly_fraction=config["gen.anomaly_fraction"],
        members_min=config["gen.members_min"],
        members_max=config["gen.members_max"],
        dim=config["gen.dim"],
        components=config["gen.components"],
        noise_sigma=config["gen.noise_sigma"],
        anomaly_mode=config["gen.anomaly_mode"],
        mixing=config["gen.mixing"],
        tail_noise_fraction=config["gen.tail_noise_fraction"],
        tail_noise_scale=config["gen.tail_noise_scale"],
        tail_noise_df=config["gen.tail_noise_df"])


def gad_config(config: PipelineConfig, alpha: float | None = None,
               n_max: int | None = None) -> GadConfig:
    return GadConfig(
        alpha=config["gad.alpha"] if alpha is None else alpha,
        spread=config["gad.spread"],
        lambda_margin=config["gad.lambda_margin"],
        group_loss_weight=config["gad.group_loss_weight"],
        recon_score_weight=config["gad.recon_score_weight"],
        latent_dim=config["gad.latent_dim"],
        hidden=tuple(config["gad.hidden"]),
        disc_hidden=config["gad.disc_hidden"],
        n_max=config["gad.n_max"] if n_max is None else n_max,
        epochs=config["gad.epochs"],
        batch_size=config["gad.batch_size"],
        learning_rate=config["gad.learning_rate"],
        seed=config["seed"])


def feature_layout(config: PipelineConfig) -> FeatureLayout:
    return FeatureLayout(slices=(
        ("command2vec", config["embed.reduction_dim"]),
        ("behavior2vec", config["embed.behavior_dim"]),
        ("trigram", config["features.trigram_buckets"]),
        ("reputation_hist", 30),
        ("density", 8),
        ("session", 6),
        ("static", 12)))


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def run_gen(config: PipelineConfig, out_dir) -> list:
    """Synthesise a labeled dataset; returns the paths written."""
    seed = config["seed"]
    syn = synthetic_config(config)
    written = []
    if config["gen.mode"] == "events":
        ds = gen_events(syn, seed)
        events_path = out_dir / "events.jsonl"
        _write_lines(events_path, config,
                     (event_to_json(e) for e in ds.events))
        prevalence_path = out_dir / "prevalence.jsonl"
        _write_lines(prevalence_path, config,
                     (json.dumps(row, sort_keys=True)
                      for row in ds.prevalence_rows))
        labels_path = out_dir / "labels.jsonl"
        _write_lines(labels_path, config, (
            json.dumps({"session_id": sid, "day": day_to_iso(day),
                        "label": label})
            for (sid, day), label in sorted(ds.session_labels.items())))
        written = [events_path, prevalence_path, labels_path]
    elif config["gen.mode"] == "vectors":
        ds = gen_vectors(syn, seed)
        features_path = out_dir / "features.jsonl"
        rows = []
        labels = []
        for key, members, label in zip(ds.keys, ds.groups, ds.labels):
            rows.append(json.dumps({
                "session_id": key, "day": day_to_iso(0),
                "members": [[float(v) for v in row] for row in members],
                "techniques": {}}))
            labels.append(json.dumps({"session_id": key,
                                      "day": day_to_iso(0),
                                      "label": int(label)}))
        _write_lines(features_path, config, rows)
        labels_path = out_dir / "labels.jsonl"
        _write_lines(labels_path, config, labels)
        written = [features_path, labels_path]
    else:
        raise DataError(f"unknown gen.mode {config['gen.mode']!r}")
    return written


def _load_events(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            events, diagnostics = parse_events(fh)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for diag in diagnostics:
        print(f"sessiongad: warning: {path}:{diag.line}: {diag.reason}",
              file=sys.stderr)
    if not events:
        raise DataError(f"{path} contains no valid events")
    return events


def run_train_embed(config: PipelineConfig, events_path, output_path,
                    mapping: MitreMapping) -> None:
    events = _load_events(events_path)
    groups = group_sessions(events)
    seed = config["seed"]
    epochs = config["embed.epochs"]
    lr = config["embed.learning_rate"]

    signature_order = sorted({e.signature for e in events})
    command_models = {}
    if config["embed.share_command_model"]:
        sentences = [normalize_tokens(e.command_line) for e in events
                     if e.command_line]
        sentences = [s for s in sentences if s]
        if sentences:
            command_models[""] = train_skipgram(
                TokenCorpus.build(sentences),
                dimension=config["embed.command_dim"],
                window=config["embed.command_window"],
                negatives=config["embed.command_negatives"],
                epochs=epochs, seed=seed, learning_rate=lr,
                signature_tag="shared")
    else:
        for i, signature in enumerate(signature_order):
            sentences = [normalize_tokens(e.command_line) for e in events
                         if e.signature == signature and e.command_line]
            sentences = [s for s in sentences if s]
            if not sentences:
                continue
            command_models[signature] = train_skipgram(
                TokenCorpus.build(sentences),
                dimension=config["embed.command_dim"],
                window=config["embed.command_window"],
                negatives=config["embed.command_negatives"],
                epochs=epochs, seed=group_seed(seed, signature),
                learning_rate=lr, signature_tag=signature)

    from .ingest import technique_sequence
    behavior_sentences = [technique_sequence(g, mapping) for g in groups]
    behavior = train_skipgram(
        TokenCorpus.build(behavior_sentences),
        dimension=config["embed.behavior_dim"],
        window=config["embed.behavior_window"],
        negatives=config["embed.behavior_negatives"],
        epochs=epochs, seed=seed + 1, learning_rate=lr,
        signature_tag="behavior")

    # the reduction autoencoder trains on the per-event stacked blocks it
    # will squeeze at extraction time
    dim = config["embed.command_dim"]
    embedder = SessionEmbedder(
        command_models=command_models, behavior_model=behavior,
        reduction=None, signature_order=signature_order, command_dim=dim,
        shared=config["embed.share_command_model"])
    from .embed import sentence_vector
    stacks = []
    for e in events:
        stacked = np.zeros(dim * len(signature_order))
        if e.command_line:
            model = embedder.command_model_for(e.signature)
            if model is not None:
                i = signature_order.index(e.signature)
                tokens = normalize_tokens(e.command_line)
                stacked[i * dim:(i + 1) * dim] = sentence_vector(model, tokens)
        stacks.append(stacked)
    embedder.reduction = train_reduction(
        np.stack(stacks),
        (dim * len(signature_order), config["embed.reduction_hidden"],
         config["embed.reduction_dim"]),
        epochs=config["embed.reduction_epochs"], seed=seed + 2)
    save_embedder(embedder, output_path)


def run_featurize(config: PipelineConfig, events_path, models_path,
                  prevalence_path, output_path,
                  mapping: MitreMapping) -> None:
    events = _load_events(events_path)
    groups = group_sessions(events)
    embedder = load_embedder(models_path)
    if prevalence_path is not None:
        with open(prevalence_path, "r", encoding="utf-8") as fh:
            stats = PrevalenceStats.from_jsonl(
                fh, window_days=config["features.prevalence_window_days"])
    else:
        stats = PrevalenceStats(
            window_days=config["features.prevalence_window_days"])
    index = PopulationIndex.build(groups)
    layout = feature_layout(config)

    from .ingest import technique_sequence
    rows = []
    for group in groups:
        members = member_vectors(group, embedder, mapping, index, stats,
                                 layout)
        techniques: dict = {}
        for t in technique_sequence(group, mapping):
            techniques[t] = techniques.get(t, 0) + 1
        rows.append(json.dumps({
            "session_id": group.session_id,
            "day": day_to_iso(group.day),
            "members": [[float(v) for v in row] for row in members],
            "techniques": {k: techniques[k] for k in sorted(techniques)},
        }))
    _write_lines(output_path, config, rows)


def load_feature_groups(config: PipelineConfig, features_path,
                        n_max: int | None = None) -> list:
    """features.jsonl -> GroupMatrix list with stable per-group seeds."""
    rows = _read_jsonl(features_path)
    if not rows:
        raise DataError(f"{features_path} contains no feature rows")
    seed = config["seed"]
    cap = config["gad.n_max"] if n_max is None else n_max
    groups = []
    for row in rows:
        key = f"{row['session_id']}|{row['day']}"
        members = np.asarray(row["members"], dtype=np.float64)
        groups.append(build_group_matrix(
            key, members, cap, seed=group_seed(seed, key),
            techniques=row.get("techniques") or {}))
    return groups


def run_train(config: PipelineConfig, features_path, output_path) -> None:
    groups = load_feature_groups(config, features_path)
    model = gad_train(groups, gad_config(config))
    model.save(output_path)


def score_lines(scores) -> list:
    return [json.dumps({
        "session_id": s.key.split("|")[0],
        "day": s.key.split("|")[1],
        "score": s.score,
        "rank": s.rank,
        "techniques": s.techniques or {},
    }) for s in scores]


def run_score(config: PipelineConfig, features_path, model_path,
              output_path) -> None:
    model = GadModel.load(model_path)
    groups = load_feature_groups(config, features_path,
                                 n_max=model.config.n_max)
    scores = gad_score(model, groups)
    _write_lines(output_path, config, score_lines(scores))


def read_scores(path) -> list:
    rows = _read_jsonl(path)
    for row in rows:
        for field in ("session_id", "day", "score", "rank"):
            if field not in row:
                raise DataError(f"{path}: score row missing {field!r}")
    return rows


def read_labels(path) -> dict:
    rows = _read_jsonl(path)
    labels = {}
    for row in rows:
        labels[(row["session_id"], row["day"])] = int(row["label"])
    if not labels:
        raise DataError(f"{path} contains no labels")
    return labels


def join_scores_labels(scores: list, labels: dict) -> tuple:
    values, truths = [], []
    missing = 0
    for row in scores:
        key = (row["session_id"], row["day"])
        if key not in labels:
            missing += 1
            continue
        values.append(float(row["score"]))
        truths.append(labels[key])
    if missing:
        print(f"sessiongad: warning: {missing} scored sessions had no label",
              file=sys.stderr)
    if not values:
        raise DataError("scores and labels share no keys")
    return np.asarray(values), np.asarray(truths)


METRICS_COLUMNS = "method,alpha,auprc,auroc,seed"


def write_metrics(path, config: PipelineConfig, rows: list) -> None:
    """metrics.csv with a comment header; rows are (method, alpha, auprc,
    auroc, seed) tuples."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# sessiongad {__version__} config={config.digest()}\n")
        fh.write(METRICS_COLUMNS + "\n")
        for method, alpha, ap, roc, seed in rows:
            fh.write(f"{method},{alpha:g},{ap:.6f},{roc:.6f},{seed}\n")


def run_eval(config: PipelineConfig, scores_path, labels_path, output_path,
             method: str = "aae-tail-filtered") -> tuple:
    scores = read_scores(scores_path)
    labels = read_labels(labels_path)
    values, truths = join_scores_labels(scores, labels)
    ap = auprc(values, truths)
    roc = auroc(values, truths)
    write_metrics(output_path, config,
                  [(method, config["gad.alpha"], ap, roc, config["seed"])])
    return ap, roc


def run_sweep(config: PipelineConfig, features_path, labels_path,
              alphas: list, output_path) -> list:
    """Train and score once per alpha with a fixed seed; returns the
    metric rows written to the CSV."""
    groups = load_feature_groups(config, features_path)
    labels = read_labels(labels_path)
    rows = []
    for alpha in alphas:
        model = gad_train(groups, gad_config(config, alpha=alpha))
        scores = gad_score(model, groups)
        values, truths = [], []
        for s in scores:
            key = (s.key.split("|")[0], s.key.split("|")[1])
            if key in labels:
                values.append(s.score)
                truths.append(labels[key])
        if not values:
            raise DataError("sweep scores and labels share no keys")
        rows.append(("aae-tail-filtered", float(alpha),
                     auprc(values, truths), auroc(values, truths),
                     config["seed"]))
    write_metrics(output_path, config, rows)
    return rows
