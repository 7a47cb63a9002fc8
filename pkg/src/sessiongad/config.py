"""Flat key = value pipeline configuration.

Every key has a documented default; unknown keys are rejected so typos
fail loudly.  The effective configuration is hashed into every output
header, which makes any artifact traceable to the exact settings that
produced it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field


class ConfigError(ValueError):
    pass


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_int_list(text: str) -> tuple:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_float_list(text: str) -> tuple:
    return tuple(float(part) for part in text.split(",") if part.strip())


# key -> (default, parser, help)
DEFAULTS = {
    "seed": (7, int, "global random seed"),
    "gen.mode": ("events", str, "generator mode: events or vectors"),
    "gen.groups": (400, int, "number of synthetic groups M"),
    "gen.anomaly_fraction": (0.05, float, "fraction of anomalous groups"),
    "gen.members_min": (4, int, "minimum members per group"),
    "gen.members_max": (8, int, "maximum members per group"),
    "gen.dim": (16, int, "feature width V in vectors mode"),
    "gen.components": (4, int, "generating Gaussian components"),
    "gen.noise_sigma": (0.05, float, "member noise around component means"),
    "gen.anomaly_mode": ("permute_positions", str,
                         "permute_positions or permute_weights"),
    "gen.mixing": ((0.5, 0.25, 0.15, 0.1), _parse_float_list,
                   "regular mixing weights (weights mode)"),
    "gen.tail_noise_fraction": (0.0, float,
                                "fraction of regular groups given "
                                "heavy-tail noise"),
    "gen.tail_noise_scale": (3.0, float, "tail noise base magnitude"),
    "gen.tail_noise_df": (1.5, float, "tail noise Student-t df"),
    "embed.command_dim": (200, int, "command embedding width"),
    "embed.command_window": (20, int, "command skip-gram window"),
    "embed.command_negatives": (10, int, "command negative samples"),
    "embed.behavior_dim": (20, int, "behavior embedding width"),
    "embed.behavior_window": (2, int, "behavior skip-gram window"),
    "embed.behavior_negatives": (2, int, "behavior negative samples"),
    "embed.epochs": (5, int, "skip-gram training epochs"),
    "embed.learning_rate": (0.025, float,
                            "skip-gram initial learning rate"),
    "embed.share_command_model": (False, _parse_bool,
                                  "one command model across signatures"),
    "embed.reduction_hidden": (400, int, "reduction autoencoder mid width"),
    "embed.reduction_dim": (200, int, "reduced command block width"),
    "embed.reduction_epochs": (30, int, "reduction training epochs"),
    "features.trigram_buckets": (64, int, "hashed tri-gram buckets"),
    "features.prevalence_window_days": (60, int,
                                        "prevalence window length"),
    "gad.alpha": (10.0, float,
                  "latent tail percentile excluded from the reference "
                  "(0 disables filtering)"),
    "gad.spread": (10.0, float, "reference kernel bandwidth"),
    "gad.lambda_margin": (0.0, float, "intra-group triplet margin"),
    "gad.group_loss_weight": (1.0, float, "triplet loss weight"),
    "gad.recon_score_weight": (0.0, float,
                               "reconstruction term weight in scores"),
    "gad.latent_dim": (60, int, "latent width K"),
    "gad.hidden": ((340, 120), _parse_int_list,
                   "encoder/decoder hidden widths"),
    "gad.disc_hidden": (60, int, "discriminator hidden width"),
    "gad.n_max": (8, int, "group matrix member capacity"),
    "gad.epochs": (120, int, "detector training epochs"),
    "gad.batch_size": (32, int, "detector batch size"),
    "gad.learning_rate": (1e-3, float, "detector learning rate"),
    "report.top_fraction": (0.01, float,
                            "fraction of sessions in the analyst report"),
    "report.figures": (True, _parse_bool,
                       "render figures next to report output"),
}


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {key: default for key, (default, _, _) in DEFAULTS.items()}
        for key, value in self.values.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown configuration key {key!r}")
            merged[key] = value
        self.values = merged

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        return self.values[key]

    def override(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key {key!r}")
        self.values[key] = value

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        values = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {line_no}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
            default, parser, _ = DEFAULTS[key]
            if parser in (int, float):
                try:
                    values[key] = parser(value)
                except ValueError as exc:
                    raise ConfigError(f"line {line_no}: {exc}") from exc
            elif parser is str:
                values[key] = value
            else:
                values[key] = parser(value)
        return cls(values=values)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def canonical_text(self) -> str:
        lines = []
        for key in sorted(DEFAULTS):
            value = self.values[key]
            if isinstance(value, tuple):
                rendered = ",".join(str(v) for v in value)
            else:
                rendered = str(value)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(
            self.canonical_text().encode("utf-8")).hexdigest()[:16]
