"""Experiment configuration: line-oriented `key = value` files.

One section per subcommand (`[generate]`, `[evaluate]`, ...); a single
file may carry several sections and each command reads only its own.
Unknown keys are rejected. Every run echoes its resolved configuration
next to its outputs and stamps records with a short hash of it.
"""

import configparser
import hashlib
import io
from pathlib import Path

from .errors import ConfigError

REQUIRED = object()


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_list(cast):
    def parse(raw):
        items = [piece.strip() for piece in raw.split(",") if piece.strip()]
        return tuple(cast(piece) for piece in items)
    return parse


CASTS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "path": Path,
    "int_list": _parse_list(int),
    "float_list": _parse_list(float),
    "str_list": _parse_list(str),
}

SOLVER_KEYS = {
    "nu": ("float", REQUIRED),
    "k_f": ("int", 4),
    "forcing_amplitude": ("float", 3e-4),
    "dt": ("float", 0.02),
    "record_interval": ("float", 1.0),
    "spinup_time": ("float", 10.0),
    "ic_kind": ("str", "vortex_blobs"),
    "ic_scale": ("float", 1e-3),
    "ic_tau": ("float", 3.5),
    "ic_power": ("float", 4.0),
    "ic_base_amplitude": ("float", 0.0),
    "ic_blob_count": ("int", 2),
    "ic_blob_radius": ("float", 1.08),
    "ic_blob_strength": ("float", 6.0),
    "ic_blob_min_separation": ("float", 2.6),
    "ic_blob_anchor_spread": ("float", 0.32),
    "ic_blob_anchor_radius": ("float", 0.0),
}

_EVAL_DATA_KEYS = {
    "source_manifest": ("path", REQUIRED),
    "eval_manifest": ("path", REQUIRED),
    "frame_lo": ("int", 10),
    "frame_hi": ("int", 49),
    "context_frames": ("int", 10),
    "horizon": ("int", 10),
    "ride_length": ("int", 3),
    "alpha": ("float", 1.0),
    "pca_components": ("int", 36),
    "latents": ("path", None),
    "eval_latents": ("path", None),
    "expected_source_nu": ("float", None),
    "expected_eval_nu": ("float", None),
    "bootstrap_samples": ("int", 1000),
    "bootstrap_level": ("float", 0.95),
    "bootstrap_seed": ("int", 17),
    "out_dir": ("path", REQUIRED),
}

SCHEMAS = {
    "generate": {
        **SOLVER_KEYS,
        "n_trajectories": ("int", REQUIRED),
        "n_frames": ("int", 50),
        "base_seed": ("int", REQUIRED),
        "trajectory_start": ("int", 0),
        "block_size": ("int", 8),
        "out_dir": ("path", REQUIRED),
    },
    "pca-fit": {
        "manifest": ("path", REQUIRED),
        "frame_lo": ("int", 10),
        "frame_hi": ("int", 49),
        "n_components": ("int", 36),
        "expected_nu": ("float", None),
        "out_path": ("path", REQUIRED),
    },
    "db-build": {
        "manifest": ("path", REQUIRED),
        "encoder": ("str", "pca"),
        "pca_model": ("path", None),
        "latents": ("path", None),
        "frame_lo": ("int", 10),
        "frame_hi": ("int", 49),
        "history_length": ("int", 1),
        "expected_nu": ("float", None),
        "out_path": ("path", REQUIRED),
    },
    "rollout": {
        **_EVAL_DATA_KEYS,
        "encoder": ("str", "pca"),
        "update_rule": ("str", "delta"),
        "oracle_matching": ("bool", False),
        "oracle_magnitude": ("bool", False),
        "history_length": ("int", 1),
        "oracle_history": ("bool", False),
        "method_label": ("str", None),
    },
    "evaluate": {
        **_EVAL_DATA_KEYS,
        "methods": ("str_list", ("persistence", "pca-relay", "knn-copy")),
    },
    "ablate-2x2": {**_EVAL_DATA_KEYS},
    "ablate-oracle": {
        **_EVAL_DATA_KEYS,
        "encoder": ("str", "pca"),
        "alpha_grid": ("float_list", (1.0, 1.25, 1.5, 1.75, 2.0, 2.5)),
    },
    "ablate-dbsize": {
        **_EVAL_DATA_KEYS,
        "subset_sizes": ("int_list", (25, 50, 100, 200)),
    },
    "ablate-ride": {
        **_EVAL_DATA_KEYS,
        "ride_grid": ("int_list", (1, 2, 3, 5, 10)),
    },
    "ablate-horizon": {
        **_EVAL_DATA_KEYS,
        "horizons": ("int_list", (10, 15, 20)),
    },
    "ablate-history": {
        **_EVAL_DATA_KEYS,
        "history_length": ("int", 10),
    },
    "export-csv": {
        "records": ("str_list", REQUIRED),
        "out_path": ("path", REQUIRED),
    },
}


class ExperimentConfig:
    """Resolved settings for one command run."""

    def __init__(self, command: str, values: dict, seed=0, workers=1,
                 deterministic=False):
        self.command = command
        self.values = values
        self.seed = seed
        self.workers = workers
        self.deterministic = deterministic

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def canonical_text(self) -> str:
        lines = [f"command = {self.command}",
                 f"cli.seed = {self.seed}",
                 f"cli.workers = {self.workers}",
                 f"cli.deterministic = {self.deterministic}"]
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]

    def write_echo(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        from .formats import atomic_write_text
        atomic_write_text(out_dir / f"{self.command}-resolved.cfg",
                          self.canonical_text())


def parse_config(command: str, path, seed=0, workers=1,
                 deterministic=False) -> ExperimentConfig:
    """Read the command's section of a config file and validate it."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    schema = SCHEMAS[command]

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as handle:
            parser.read_file(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except configparser.Error as err:
        raise ConfigError(f"malformed config {path}: {err}") from None

    raw = dict(parser[command]) if parser.has_section(command) else {}
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(
            f"unknown keys in [{command}]: {', '.join(sorted(unknown))}")

    values = {}
    for key, (kind, default) in schema.items():
        if key in raw:
            try:
                values[key] = CASTS[kind](raw[key])
            except (ValueError, TypeError) as err:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({err})") \
                    from None
        elif default is REQUIRED:
            raise ConfigError(f"[{command}] is missing required key {key!r}")
        else:
            values[key] = default
    # paths resolve relative to the config file's directory
    base = Path(path).parent
    for key, (kind, _) in schema.items():
        if kind == "path" and values[key] is not None:
            values[key] = (base / values[key]).resolve()
    return ExperimentConfig(command, values, seed=seed, workers=workers,
                            deterministic=deterministic)


def solver_config_from(values: dict, seed: int):
    """Build a SolverConfig from generate-section values."""
    from .solver import SolverConfig
    kwargs = {key: values[key] for key in SOLVER_KEYS if key in values}
    return SolverConfig(seed=seed, **kwargs)
