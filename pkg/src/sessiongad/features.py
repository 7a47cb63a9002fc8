"""Fixed-width per-session feature vectors.

The layout concatenates, in order: the reduced command-embedding block,
the behavior-sequence embedding, hashed tri-grams of file/process/signer
strings, reputation histograms, density features, session features, and
static file features.  Defaults total 340.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .embed import (
    SessionEmbedder,
    normalize_tokens,
    reduce as reduce_stack,
    sentence_vector,
    trigram_featurize,
)
from .ingest import MitreMapping, SessionGroup, technique_sequence

_SECONDS_PER_DAY = 86400

DEFAULT_LAYOUT = (
    ("command2vec", 200),
    ("behavior2vec", 20),
    ("trigram", 64),
    ("reputation_hist", 30),
    ("density", 8),
    ("session", 6),
    ("static", 12),
)


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureLayout:
    slices: tuple = DEFAULT_LAYOUT

    @property
    def width(self) -> int:
        return sum(w for _, w in self.slices)

    def slice_of(self, name: str) -> slice:
        start = 0
        for slice_name, width in self.slices:
            if slice_name == name:
                return slice(start, start + width)
            start += width
        raise FeatureError(f"unknown slice {name!r}")


# ---------------------------------------------------------------------------
# Prevalence statistics
# ---------------------------------------------------------------------------

@dataclass
class PrevalenceStats:
    """Daily (machines, enterprises) counts per file hash and signer over
    a fixed window, plus reputation scores in [0, 1]."""

    window_days: int = 60
    file_days: dict = field(default_factory=dict)     # hash -> {day: (m, e)}
    signer_days: dict = field(default_factory=dict)   # subject -> {day: (m, e)}
    file_reputation: dict = field(default_factory=dict)
    signer_reputation: dict = field(default_factory=dict)

    def add(self, kind: str, key: str, day: int, machines: int,
            enterprises: int, reputation: float) -> None:
        if kind == "file":
            days, reps = self.file_days, self.file_reputation
        elif kind == "signer":
            days, reps = self.signer_days, self.signer_reputation
        else:
            raise FeatureError(f"unknown prevalence kind {kind!r}")
        days.setdefault(key, {})[day] = (machines, enterprises)
        reps[key] = reputation

    def file_prevalence(self, file_hash: str, day: int) -> int:
        """Total machines seen over the window ending at ``day``."""
        per_day = self.file_days.get(file_hash)
        if not per_day:
            return 0
        lo = day - self.window_days + 1
        return sum(m for d, (m, _) in per_day.items() if lo <= d <= day)

    @classmethod
    def from_jsonl(cls, stream, window_days: int = 60) -> "PrevalenceStats":
        stats = cls(window_days=window_days)
        for raw in stream:
            line = raw.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "header" in obj:
                continue
            stats.add(obj["kind"], obj["key"], int(obj["day"]),
                      int(obj["machines"]), int(obj["enterprises"]),
                      float(obj.get("reputation", 0.0)))
        return stats


# ---------------------------------------------------------------------------
# Population index for density features
# ---------------------------------------------------------------------------

@dataclass
class PopulationIndex:
    """Read-only cross-session lookups; build once, extract in parallel."""

    machines_by_sid: dict
    enterprises_by_sid: dict
    days_by_sid: dict
    commands_by_key: dict
    signatures_by_key: dict
    max_machines: int
    max_enterprises: int
    max_events: int
    max_signatures: int
    max_processes: int
    max_days: int

    @classmethod
    def build(cls, population: list) -> "PopulationIndex":
        machines: dict = {}
        enterprises: dict = {}
        days: dict = {}
        commands: dict = {}
        signatures: dict = {}
        max_events = max_sigs = max_procs = 1
        for group in population:
            sid = group.session_id
            machines.setdefault(sid, set())
            enterprises.setdefault(sid, set())
            days.setdefault(sid, set()).add(group.day)
            cmds, sigs, procs = set(), set(), set()
            for e in group.events:
                machines[sid].add(e.machine_id)
                if e.enterprise_id:
                    enterprises[sid].add(e.enterprise_id)
                if e.command_line:
                    cmds.add(e.command_line)
                sigs.add(e.signature)
                if e.process_name:
                    procs.add(e.process_name)
            commands[group.key] = cmds
            signatures[group.key] = sigs
            max_events = max(max_events, group.member_count)
            max_sigs = max(max_sigs, len(sigs))
            max_procs = max(max_procs, len(procs))
        return cls(
            machines_by_sid=machines, enterprises_by_sid=enterprises,
            days_by_sid=days, commands_by_key=commands,
            signatures_by_key=signatures,
            max_machines=max((len(v) for v in machines.values()), default=1),
            max_enterprises=max((len(v) for v in enterprises.values()),
                                default=1),
            max_events=max_events, max_signatures=max_sigs,
            max_processes=max_procs,
            max_days=max((len(v) for v in days.values()), default=1))


def _overlap_ratio(own: set, key, by_key: dict) -> float:
    if not own:
        return 0.0
    others: set = set()
    for other_key, values in by_key.items():
        if other_key != key:
            others |= values
    return len(own & others) / len(own)


def density_features(group: SessionGroup, index: PopulationIndex
                     ) -> np.ndarray:
    """Population-relative popularity and overlap features, all in [0, 1]."""
    sid = group.session_id
    key = group.key
    own_cmds = {e.command_line for e in group.events if e.command_line}
    own_sigs = {e.signature for e in group.events}
    own_procs = {e.process_name for e in group.events if e.process_name}
    return np.array([
        len(index.machines_by_sid.get(sid, ())) / max(index.max_machines, 1),
        len(index.enterprises_by_sid.get(sid, ()))
        / max(index.max_enterprises, 1),
        _overlap_ratio(own_sigs, key, index.signatures_by_key),
        _overlap_ratio(own_cmds, key, index.commands_by_key),
        group.member_count / max(index.max_events, 1),
        len(own_sigs) / max(index.max_signatures, 1),
        len(own_procs) / max(index.max_processes, 1),
        len(index.days_by_sid.get(sid, ())) / max(index.max_days, 1),
    ])


def session_features(group: SessionGroup) -> np.ndarray:
    """Session flags (majority over events), normalised duration, and the
    hour-of-day phase.  The phase components are raw sin/cos in [-1, 1]."""
    n = group.member_count
    remote = sum(e.remote for e in group.events) / n
    admin = sum(e.admin for e in group.events) / n
    idle = sum(e.idle for e in group.events) / n
    first = group.events[0].timestamp
    last = group.events[-1].timestamp
    duration = (last - first) / _SECONDS_PER_DAY
    start_hour = (first % _SECONDS_PER_DAY) / 3600.0
    angle = 2.0 * np.pi * start_hour / 24.0
    return np.array([
        1.0 if remote >= 0.5 else 0.0,
        1.0 if admin >= 0.5 else 0.0,
        1.0 if idle >= 0.5 else 0.0,
        duration,
        np.sin(angle),
        np.cos(angle),
    ])


_PATH_SEP = ("\\", "/", "%", ";")
_TEMP_COMPONENTS = {"temp", "tmp"}
_SYSTEM_COMPONENTS = {"system32", "syswow64", "windows"}


def _components(path: str) -> list:
    text = path.lower()
    for sep in _PATH_SEP[1:]:
        text = text.replace(sep, "\\")
    return [c for c in text.split("\\") if c]


def _is_temp_path(path: str) -> bool:
    return any(c in _TEMP_COMPONENTS for c in _components(path))


def _is_system_path(path: str) -> bool:
    return any(c in _SYSTEM_COMPONENTS for c in _components(path))


def _saturate(x: float) -> float:
    """Monotone squash of a nonnegative count into [0, 1)."""
    return x / (1.0 + x)


def static_features(group: SessionGroup) -> np.ndarray:
    n = group.member_count
    signer_ratio = sum(1 for e in group.events if e.signer_subject) / n
    entropies = [e.entropy for e in group.events]
    imports = float(np.mean([e.import_count for e in group.events]))
    sections = float(np.mean([e.section_count for e in group.events]))
    exports = float(np.mean([e.export_count for e in group.events]))
    temp_ratio = sum(1 for e in group.events if _is_temp_path(e.file_path)) / n
    system_ratio = sum(
        1 for e in group.events if _is_system_path(e.file_path)) / n
    blob = " ".join((e.signature + " " + e.command_line).lower()
                    for e in group.events)
    schtask = 1.0 if ("scheduled task" in blob or "schtasks" in blob) else 0.0
    registry = 1.0 if ("registry" in blob or "currentversion\\run" in blob
                       or "reg add" in blob) else 0.0
    directories = {tuple(_components(e.file_path)[:-1])
                   for e in group.events if e.file_path}
    distinct_hashes = {e.file_hash for e in group.events if e.file_hash}
    return np.array([
        signer_ratio,
        float(np.mean(entropies)) / 8.0,
        float(np.max(entropies)) / 8.0,
        _saturate(imports),
        _saturate(sections),
        _saturate(exports),
        temp_ratio,
        system_ratio,
        schtask,
        registry,
        _saturate(len(directories)),
        len(distinct_hashes) / n,
    ])


_HIST_BINS = 10


def _prevalence_bin(machines: int) -> int:
    """Log-spaced bins 0, 1, 2-3, 4-7, ... 256+ (prevalence is heavy-tailed)."""
    if machines <= 0:
        return 0
    return min(_HIST_BINS - 1, int(np.floor(np.log2(machines))) + 1)


def _reputation_bin(score: float) -> int:
    return min(_HIST_BINS - 1, int(np.floor(score * _HIST_BINS)))


def _averaged_onehots(bins: list) -> np.ndarray:
    hist = np.zeros(_HIST_BINS)
    if not bins:
        hist[0] = 1.0
        return hist
    for b in bins:
        hist[b] += 1.0
    return hist / hist.sum()


def reputation_features(group: SessionGroup, stats: PrevalenceStats
                        ) -> np.ndarray:
    """Three 10-bin histograms (file prevalence, signer reputation, file
    reputation), averaged over the group's distinct keys, each summing
    to one.  Keys absent from the statistics fall into the lowest bin."""
    hashes = sorted({e.file_hash for e in group.events if e.file_hash})
    signers = sorted({e.signer_subject for e in group.events
                      if e.signer_subject})
    prevalence_bins = [_prevalence_bin(stats.file_prevalence(h, group.day))
                       for h in hashes]
    signer_bins = [_reputation_bin(stats.signer_reputation.get(s, 0.0))
                   for s in signers]
    file_bins = [_reputation_bin(stats.file_reputation.get(h, 0.0))
                 for h in hashes]
    return np.concatenate([
        _averaged_onehots(prevalence_bins),
        _averaged_onehots(signer_bins),
        _averaged_onehots(file_bins),
    ])


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def _command_block(group: SessionGroup, embedder: SessionEmbedder
                   ) -> np.ndarray:
    """Per-signature sentence vectors stacked in the fixed block order
    (absent signatures contribute zero blocks), then reduced."""
    dim = embedder.command_dim
    by_signature: dict = {}
    for e in group.events:
        if e.command_line:
            by_signature.setdefault(e.signature, []).append(e.command_line)
    stacked = np.zeros(dim * len(embedder.signature_order))
    for i, signature in enumerate(embedder.signature_order):
        commands = by_signature.get(signature)
        if not commands:
            continue
        model = embedder.command_model_for(signature)
        if model is None:
            continue
        tokens = normalize_tokens(" ".join(commands))
        stacked[i * dim:(i + 1) * dim] = sentence_vector(model, tokens)
    return reduce_stack(embedder.reduction, stacked)


def assemble(group: SessionGroup, embedder: SessionEmbedder,
             mapping: MitreMapping, index: PopulationIndex,
             stats: PrevalenceStats,
             layout: FeatureLayout = FeatureLayout()) -> np.ndarray:
    """Concatenate every slice in the fixed layout order.

    Output width is exactly layout.width; any sub-extractor failure is
    re-raised with the slice name attached.
    """
    parts = {
        "command2vec": lambda: _command_block(group, embedder),
        "behavior2vec": lambda: sentence_vector(
            embedder.behavior_model, technique_sequence(group, mapping)),
        "trigram": lambda: trigram_featurize(
            sorted({s for e in group.events
                    for s in (e.file_path, e.process_name, e.signer_subject)
                    if s}),
            layout.slice_of("trigram").stop - layout.slice_of("trigram").start),
        "reputation_hist": lambda: reputation_features(group, stats),
        "density": lambda: density_features(group, index),
        "session": lambda: session_features(group),
        "static": lambda: static_features(group),
    }
    out = np.zeros(layout.width)
    for name, width in layout.slices:
        try:
            values = np.asarray(parts[name]())
        except Exception as exc:
            raise FeatureError(f"slice {name!r}: {exc}") from exc
        target = layout.slice_of(name)
        if values.shape != (width,):
            raise FeatureError(
                f"slice {name!r} produced width {values.shape}, wanted {width}")
        if not np.isfinite(values).all():
            raise FeatureError(f"slice {name!r} produced non-finite values")
        out[target] = values
    return out


def member_vectors(group: SessionGroup, embedder: SessionEmbedder,
                   mapping: MitreMapping, index: PopulationIndex,
                   stats: PrevalenceStats,
                   layout: FeatureLayout = FeatureLayout()) -> np.ndarray:
    """Per-event feature vectors in timestamp order, shape (N, width).

    Each event is featurized as a one-event sub-session through the same
    assembly path, so a group's matrix rows live in the same space as
    whole-session vectors.
    """
    rows = []
    for e in group.events:
        sub = SessionGroup(session_id=group.session_id, day=group.day,
                           events=[e])
        rows.append(assemble(sub, embedder, mapping, index, stats, layout))
    return np.stack(rows)
