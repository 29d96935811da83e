"""
Weight and config file discovery.

Priority for resolving either file:
    1. Explicit path passed by the caller (CLI flag)
    2. ``RINGFORMER_WEIGHTS`` / ``RINGFORMER_CONFIG`` environment variable
    3. No file: seeded initialization from the base preset
"""

import os
from pathlib import Path
from typing import Optional, Union

from ringformer.errors import ConfigError
from ringformer.generator import GeneratorConfig, GeneratorWeights, build_generator

WEIGHTS_ENV = "RINGFORMER_WEIGHTS"
CONFIG_ENV = "RINGFORMER_CONFIG"

PathLike = Union[str, Path]


def _resolve(explicit: Optional[PathLike], env_var: str, what: str) -> Optional[Path]:
    if explicit is not None:
        path, source = Path(explicit), "argument"
    elif os.environ.get(env_var):
        path, source = Path(os.environ[env_var]), env_var
    else:
        return None

    if not path.is_file():
        raise FileNotFoundError(
            f"{what} file not found: {path} (from {source})\n"
            f"Set the {env_var} environment variable or pass the path explicitly."
        )
    return path


def resolve_weights_path(weights_path: Optional[PathLike] = None) -> Optional[Path]:
    """RFW1 weight file to load, or None for seeded weights."""
    return _resolve(weights_path, WEIGHTS_ENV, "Weight")


def resolve_config_path(config_path: Optional[PathLike] = None) -> Optional[Path]:
    """JSON generator config to load, or None for the preset."""
    return _resolve(config_path, CONFIG_ENV, "Config")


def load_generator(weights_path: Optional[PathLike] = None,
                   config_path: Optional[PathLike] = None,
                   preset: str = "base",
                   **overrides) -> GeneratorWeights:
    """
    Generator weights from a file, or freshly initialized from a config.

    Args:
        weights_path: RFW1 file (else ``RINGFORMER_WEIGHTS``).
        config_path: JSON config (else ``RINGFORMER_CONFIG``, else ``preset``).
        preset: Name in ``DEFAULT_PARAMS`` used when no config file is found.
        **overrides: GeneratorConfig fields set on top (e.g. seed, num_devices);
            ``None`` values are ignored.

    Raises:
        FileNotFoundError: If a named file does not exist.
        ConfigError: If the config file describes a different architecture
            than the weight file, or an override changes a weight shape.
    """
    from ringformer.formats import read_weights

    overrides = {k: v for k, v in overrides.items() if v is not None}
    weights_file = resolve_weights_path(weights_path)
    config_file = resolve_config_path(config_path)

    if weights_file is None:
        base = GeneratorConfig.from_json(config_file).to_dict() if config_file else GeneratorConfig.preset(preset).to_dict()
        return build_generator(GeneratorConfig.from_dict({**base, **overrides}))

    weights = read_weights(weights_file)
    stored = weights.config
    if config_file is not None:
        requested = GeneratorConfig.from_json(config_file)
        if requested.architecture() != stored.architecture():
            changed = sorted(k for k, v in requested.architecture().items() if stored.architecture()[k] != v)
            raise ConfigError(f"{config_file} conflicts with the architecture stored in {weights_file}: "
                              f"fields {changed} differ")
        overrides = {**{k: getattr(requested, k) for k in ("block_len", "max_rotations", "num_devices",
                                                           "precision", "dropout")}, **overrides}
    overrides.pop("seed", None)
    if overrides:
        config = GeneratorConfig.from_dict({**stored.to_dict(), **overrides})
        if config.architecture() != stored.architecture():
            raise ConfigError(f"overrides {sorted(overrides)} change the architecture stored in {weights_file}")
        arrays = {name: a.astype(config.dtype) for name, a in weights.arrays.items()}
        weights = GeneratorWeights(config, arrays)
    return weights
