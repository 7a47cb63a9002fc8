"""Synthetic datasets with ground-truth group anomalies.

Vector mode plants distribution-based group anomalies: every member is
drawn from the shared mixture components that regular groups use, so no
member is a point outlier, but the anomalous groups arrange members
differently.  Two mechanisms are available:

* ``permute_positions`` (default): regular groups follow a canonical
  member-to-component assignment sequence; anomalous groups apply a
  seeded permutation of that assignment.  The pooled per-point marginal
  is identical for both classes by construction.
* ``permute_weights``: members are drawn i.i.d. from mixing weights;
  anomalous groups use a component permutation of the regular weights.

Event mode synthesises full telemetry sessions (see gen_events) so the
entire parse -> featurize -> score path can be exercised end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SyntheticConfig:
    groups: int = 500
    anomaly_fraction: float = 0.05
    members_min: int = 4
    members_max: int = 8
    dim: int = 16
    components: int = 4
    noise_sigma: float = 0.05
    anomaly_mode: str = "permute_positions"
    mixing: tuple = (0.5, 0.25, 0.15, 0.1)
    anomalous_mixing: tuple | None = None
    tail_noise_fraction: float = 0.0
    tail_noise_scale: float = 3.0
    tail_noise_df: float = 1.5

    def __post_init__(self):
        if not 0.0 < self.anomaly_fraction < 1.0:
            raise ValueError("anomaly_fraction must lie in (0, 1)")
        if self.members_min < 1 or self.members_max < self.members_min:
            raise ValueError("invalid member count range")
        if self.anomaly_mode not in ("permute_positions", "permute_weights"):
            raise ValueError(f"unknown anomaly_mode {self.anomaly_mode!r}")
        if abs(sum(self.mixing) - 1.0) > 1e-9 or min(self.mixing) < 0:
            raise ValueError("mixing weights must be a simplex vector")


@dataclass
class LabeledDataset:
    """Groups plus binary labels (1 = anomalous group)."""

    keys: list
    groups: list          # one (n_i, dim) array per group
    labels: np.ndarray
    tail_noise: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.labels) != len(self.groups):
            raise ValueError("label count must equal group count")


def _component_means(rng: np.random.Generator, components: int,
                     dim: int) -> np.ndarray:
    # centres kept inside (0, 1) so a sigmoid decoder can reconstruct them
    return rng.uniform(0.15, 0.85, size=(components, dim))


def _canonical_pattern(rng: np.random.Generator, components: int,
                       length: int) -> np.ndarray:
    """Component assignment per member slot; prefix of length L is a
    permutation of all components so short groups still touch several."""
    reps = length // components + 1
    pattern = np.concatenate(
        [rng.permutation(components) for _ in range(reps)])[:length]
    return pattern


def gen_vectors(config: SyntheticConfig, seed: int) -> LabeledDataset:
    """Feature-vector mode dataset; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    m = config.groups
    n_anom = int(m * config.anomaly_fraction)
    labels = np.zeros(m, dtype=int)
    anom_idx = rng.choice(m, size=n_anom, replace=False)
    labels[anom_idx] = 1

    tail_noise = np.zeros(m, dtype=int)
    if config.tail_noise_fraction > 0:
        regular = np.flatnonzero(labels == 0)
        n_tail = int(m * config.tail_noise_fraction)
        tail_idx = rng.choice(regular, size=min(n_tail, len(regular)),
                              replace=False)
        tail_noise[tail_idx] = 1
    # contamination shares one direction; per-group magnitudes sit near the
    # base scale with a heavy upper tail, so the noise groups form a dense
    # off-bulk lump plus stragglers
    tail_dir = rng.standard_normal(config.dim)
    tail_dir /= np.linalg.norm(tail_dir)

    means = _component_means(rng, config.components, config.dim)
    pattern = _canonical_pattern(rng, config.components, config.members_max)

    mixing = np.asarray(config.mixing[: config.components], dtype=np.float64)
    mixing = mixing / mixing.sum()
    if config.anomalous_mixing is not None:
        anom_mixing = np.asarray(config.anomalous_mixing, dtype=np.float64)
        anom_mixing = anom_mixing / anom_mixing.sum()
    else:
        anom_mixing = mixing[::-1].copy()

    keys, groups = [], []
    for i in range(m):
        n = int(rng.integers(config.members_min, config.members_max + 1))
        if config.anomaly_mode == "permute_positions":
            comps = pattern[:n].copy()
            if labels[i] == 1:
                shuffled = comps[rng.permutation(n)]
                if np.array_equal(shuffled, comps):
                    shuffled = comps[::-1]
                comps = shuffled
        else:
            weights = anom_mixing if labels[i] == 1 else mixing
            comps = rng.choice(config.components, size=n, p=weights)
        vecs = means[comps] + rng.normal(0.0, config.noise_sigma,
                                         size=(n, config.dim))
        if tail_noise[i]:
            magnitude = config.tail_noise_scale * (
                1.0 + abs(rng.standard_t(config.tail_noise_df)) / 4.0)
            vecs = vecs + magnitude * tail_dir
        keys.append(f"g{i:05d}")
        groups.append(vecs)
    return LabeledDataset(keys=keys, groups=groups, labels=labels,
                          tail_noise=tail_noise)


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic (sup CDF difference)."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / len(a)
    cdf_b = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))


# ---------------------------------------------------------------------------
# Event mode
# ---------------------------------------------------------------------------

# benign and attacker command/signature repertoires; command text follows
# the anonymised placeholder style of real session transcripts
_GENRES = {
    "admin": {
        "signatures": [
            ("Command launches by cmd and system tools", [
                'cmd.exe" /C "backupupgrade.bat', "net config workstation",
                'installer.exe" -o install -ip [localip] -u',
                'inventory.exe "01-run.xml"',
            ]),
            ("Powershell launches other process", [
                "powershell.exe iex (Text.Encoding..",
                'powershell.exe"Bypass-EncodedCommand JABwACAAPQAgAFMAdA..',
            ]),
            ("Scheduled tasks added or launched", [
                "schtasks /create /tn backup /tr backup.bat",
            ]),
        ],
        "processes": ["cmd.exe", "powershell.exe", "installer.exe"],
        "paths": ["c:%windows%system32%cmd.exe",
                  "c:%program files%ops%installer.exe"],
        "signer": "Contoso IT",
        "remote": 0.3, "admin": 0.8,
    },
    "dev": {
        "signatures": [
            ("Build tools and script execution", [
                'cmd.exe/c""apps%eclipse%lunaee_4_4_1%eclipse%lunaee.bat',
                'ruby.exe" "tools%ruby%ridk%current%bin%rspec/cookbooks/'
                'configservice',
                "msbuild project.sln /t:rebuild",
            ]),
            ("Network activity by command line tools", [
                "ping -n 1 [IP]", "ping [IP] monitor.log",
            ]),
            ("Client tools with network activity other than browsing", [
                'iexplore.exe" SCODEF:XXXX CREDAT:XXXXXX /prefetch:X',
            ]),
        ],
        "processes": ["ruby.exe", "cmd.exe", "iexplore.exe"],
        "paths": ["c:%apps%eclipse%eclipse.exe", "c:%tools%ruby%ruby.exe"],
        "signer": "Ruby Developers",
        "remote": 0.1, "admin": 0.2,
    },
    "helpdesk": {
        "signatures": [
            ("Client tools with network activity other than browsing", [
                'winword.exe" /n "downloads%dada.doc" /o ""',
                'chrome.exe", cmd.exe /K RSSFeeds.bat', 'excel.exe" /e',
            ]),
            ("Command launches by cmd and system tools", [
                '"cmd"', 'query.exe" user',
            ]),
        ],
        "processes": ["winword.exe", "chrome.exe", "excel.exe"],
        "paths": ["c:%program files%office%winword.exe",
                  "c:%program files%chrome%chrome.exe"],
        "signer": "Microsoft Corporation",
        "remote": 0.05, "admin": 0.05,
    },
    "attacker": {
        "signatures": [
            ("Command launches by cmd and system tools", [
                "cmd hostname", "whoami", "query user", "ipconfig -all",
                "net user", "net view /domain", "tasklist /svc",
            ]),
            ("Network activity by command line tools", [
                "ping www.google.com", "netstat -ano | find %TCP%",
                "msdtc [IP] [port]",
            ]),
            ("Powershell launches other process", [
                "cmd.exe /Q /c powershell -nop -w hidden -encodedcommand "
                "JABzAD0AT",
            ]),
            ("Random folder creation and temp execution", [
                "appdata%roaming%tmpxxx.exe", "%Temp%EWH.bat",
                'appdatalocaltemp%tmpxxxx.exe", /c net config workstation',
            ]),
        ],
        "processes": ["cmd.exe", "whoami.exe", "net.exe", "powershell.exe"],
        "paths": ["c:%users%kim%appdata%local%temp%tmpxxxx.exe",
                  "c:%windows%system32%cmd.exe"],
        "signer": "",
        "remote": 0.9, "admin": 0.7,
    },
}

_BENIGN_GENRES = ("admin", "dev", "helpdesk")
_BASE_DAY = 18050  # days since epoch; keeps timestamps realistic


@dataclass
class EventDataset:
    """Raw-event mode output: JSONL-ready events plus labels per session."""

    events: list                     # RawEvent, already timestamp-sorted
    prevalence_rows: list            # dicts for prevalence.jsonl
    session_labels: dict             # (session_id, day) -> 0/1

    @property
    def labels(self) -> np.ndarray:
        return np.array([self.session_labels[k]
                         for k in sorted(self.session_labels)])


def gen_events(config: SyntheticConfig, seed: int) -> EventDataset:
    """Synthetic telemetry sessions exercising the full event pipeline.

    Benign genres (admin, dev, helpdesk) and an attacker genre share an
    overlapping command repertoire; attacker sessions run the recon
    sequence in its canonical order.  Output parses with zero
    diagnostics and ships with a matching 60-day prevalence table.
    """
    from .ingest import RawEvent  # local import to avoid a cycle

    rng = np.random.default_rng(seed)
    m = config.groups
    n_anom = int(m * config.anomaly_fraction)
    labels = np.zeros(m, dtype=int)
    labels[rng.choice(m, size=n_anom, replace=False)] = 1

    enterprises = [f"E-{i:03d}" for i in range(max(2, m // 40))]
    machines = [f"M-{i:04d}" for i in range(max(4, m // 4))]
    benign_hashes = [f"b{h:04x}" for h in range(24)]
    attacker_hashes = [f"a{h:04x}" for h in range(6)]

    events: list = []
    session_labels: dict = {}
    for i in range(m):
        sid = f"S-1-5-21-{seed % 97:02d}-{i:05d}"
        day = _BASE_DAY + int(rng.integers(0, 3))
        genre_name = "attacker" if labels[i] else \
            _BENIGN_GENRES[int(rng.integers(len(_BENIGN_GENRES)))]
        genre = _GENRES[genre_name]
        enterprise = enterprises[int(rng.integers(len(enterprises)))]
        machine = machines[int(rng.integers(len(machines)))]
        n_events = int(rng.integers(config.members_min,
                                    config.members_max + 1))
        start = day * 86400 + int(rng.integers(6 * 3600, 20 * 3600))

        pool = [(sig, cmd) for sig, cmds in genre["signatures"]
                for cmd in cmds]
        if genre_name == "attacker":
            chosen = [pool[k % len(pool)] for k in range(n_events)]
        else:
            picks = rng.integers(0, len(pool), size=n_events)
            chosen = [pool[k] for k in picks]
        hashes = attacker_hashes if genre_name == "attacker" else benign_hashes
        for j, (signature, command) in enumerate(chosen):
            events.append(RawEvent(
                session_id=sid, machine_id=machine, enterprise_id=enterprise,
                timestamp=start + 30 * j + int(rng.integers(0, 20)),
                signature=signature, command_line=command,
                file_path=genre["paths"][int(rng.integers(len(genre["paths"])))],
                process_name=genre["processes"][
                    int(rng.integers(len(genre["processes"])))],
                signer_subject=genre["signer"],
                entropy=float(np.round(rng.uniform(
                    6.5 if genre_name == "attacker" else 4.0,
                    8.0 if genre_name == "attacker" else 6.5), 3)),
                remote=bool(rng.random() < genre["remote"]),
                admin=bool(rng.random() < genre["admin"]),
                idle=bool(rng.random() < 0.1),
                file_hash=hashes[int(rng.integers(len(hashes)))],
                import_count=int(rng.integers(5, 120)),
                section_count=int(rng.integers(3, 9)),
                export_count=int(rng.integers(0, 12))))
        session_labels[(sid, day)] = int(labels[i])

    events.sort(key=lambda e: (e.timestamp, e.session_id))

    prevalence_rows = []
    for day in range(_BASE_DAY - 59, _BASE_DAY + 3):
        for h in benign_hashes:
            prevalence_rows.append({
                "kind": "file", "key": h, "day": day,
                "machines": int(rng.integers(20, 60)),
                "enterprises": int(rng.integers(3, 10)),
                "reputation": 0.9})
        for h in attacker_hashes:
            prevalence_rows.append({
                "kind": "file", "key": h, "day": day,
                "machines": int(rng.integers(0, 2)),
                "enterprises": int(rng.integers(0, 2)),
                "reputation": 0.1})
    for genre in _GENRES.values():
        if genre["signer"]:
            prevalence_rows.append({
                "kind": "signer", "key": genre["signer"], "day": _BASE_DAY,
                "machines": 50, "enterprises": 10, "reputation": 0.95})
    return EventDataset(events=events, prevalence_rows=prevalence_rows,
                        session_labels=session_labels)
