"""Line-based ``key = value`` run configuration.

Blank lines and lines starting with ``#`` are ignored.  Every key must be
known; numeric values accept fractions such as ``8/255``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from .errors import ConfigError

__all__ = ["RunConfig", "KEYS", "REQUIRED", "parse_value"]


def _number(text: str) -> float:
    return float(Fraction(text.strip())) if "/" in text else float(text)


def _int(text: str) -> int:
    value = _number(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"{text!r} is not one of {', '.join(options)}")
        return text

    return parse


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(_int(t) for t in text.split(",") if t.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _optional_number(text: str) -> float | None:
    return None if text.lower() in ("", "none", "auto") else _number(text)


# key -> (parser, default); a default of None marks a key with no fallback
KEYS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "seed": (_int, None),
    "data.count": (_int, None),
    "data.size": (_int, 32),
    "data.classes": (_int, 10),
    "wavelet.filter": (_choice("haar", "db4"), "haar"),
    "wavelet.levels": (_int, 2),
    "wavelet.bands": (_choice("all", "finest"), "all"),
    "vqvae.K": (_int, 64),
    "vqvae.D": (_int, 32),
    "vqvae.hidden": (_int, 32),
    "vqvae.beta": (_number, 0.25),
    "vqvae.epochs": (_int, 5),
    "vqvae.lr": (_number, 2e-3),
    "vqvae.batch_size": (_int, 32),
    "vqvae.codebook_init": (_choice("uniform", "data"), "uniform"),
    "clf.channels": (_int_list, (16, 32, 64)),
    "clf.epochs": (_int, 8),
    "clf.lr": (_number, 2e-3),
    "clf.batch_size": (_int, 64),
    "attack.method": (_choice("latent", "fgsm", "pgd", "mim", "dim"), None),
    "attack.eta": (_number, 0.3),
    "attack.epsilon": (_number, 8 / 255),
    "attack.steps": (_int, 100),
    "attack.lr": (_number, 0.01),
    "attack.alpha": (_optional_number, "auto"),
    "attack.mu": (_number, 1.0),
    "attack.dim_prob": (_number, 0.7),
    "attack.workers": (_int, 1),
    "metrics.fid_layer": (_choice("conv1", "conv2", "conv3"), "conv2"),
    "metrics.lpips_layers": (_str_list, ("conv1", "conv2", "conv3")),
}

REQUIRED: dict[str, tuple[str, ...]] = {
    "gen-data": ("seed", "data.count"),
    "train-vae": ("seed",),
    "train-clf": ("seed",),
    "attack": ("seed", "attack.method"),
    "evaluate": ("seed",),
    "export-images": (),
}


def parse_value(key: str, text: str) -> Any:
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}")
    try:
        return KEYS[key][0](text.strip())
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=dict)
    source: str = "<flags>"

    @classmethod
    def parse(cls, text: str, source: str = "<string>") -> "RunConfig":
        values: dict[str, Any] = {}
        offset = 0
        for lineno, line in enumerate(text.splitlines(keepends=True), start=1):
            where = f"{source}: line {lineno} (byte {offset})"
            offset += len(line.encode("utf-8"))
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, sep, value = stripped.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"{where}: expected 'key = value', got {stripped!r}")
            if key in values:
                raise ConfigError(f"{where}: duplicate key {key!r}")
            try:
                values[key] = parse_value(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{where}: {exc}") from None
        return cls(values, source)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"{path}: byte {exc.start}: config is not valid UTF-8") from None
        return cls.parse(text, str(path))

    def override(self, overrides: dict[str, str]) -> "RunConfig":
        """Copy with flag values (raw strings) taking precedence."""
        values = dict(self.values)
        for key, text in overrides.items():
            values[key] = parse_value(key, text)
        return RunConfig(values, self.source)

    def require(self, subcommand: str) -> "RunConfig":
        missing = [k for k in REQUIRED[subcommand] if k not in self.values]
        if missing:
            raise ConfigError(f"{self.source}: {subcommand} needs {', '.join(missing)}")
        return self

    def __getitem__(self, key: str) -> Any:
        if key in self.values:
            return self.values[key]
        if key not in KEYS:
            raise KeyError(key)
        default = KEYS[key][1]
        if default is None:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return parse_value(key, default) if key == "attack.alpha" else default

    def to_dict(self) -> dict[str, Any]:
        return {k: self[k] for k in KEYS if k in self.values or KEYS[k][1] is not None}
