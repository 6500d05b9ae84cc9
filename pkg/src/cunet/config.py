"""Architecture configs and their flat key-value serialization.

The on-disk form is one `key = value` per line, UTF-8, with exactly the keys
u, m, n, depth, keypoints, in_channels, input_res, coupling, supervisions,
seed. Dense-net configs reuse the same line format with their own key set and
an `arch` discriminator; that variant appears only inside checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

__all__ = [
    "CUNetConfig",
    "DenseUNetConfig",
    "CONFIG_KEYS",
    "format_config",
    "parse_config",
    "parse_config_file",
    "format_dense_config",
    "parse_dense_config",
]

CONFIG_KEYS = ("u", "m", "n", "depth", "keypoints", "in_channels", "input_res",
               "coupling", "supervisions", "seed")

DENSE_KEYS = ("layers", "growth", "width", "depth", "keypoints", "in_channels",
              "input_res", "seed")


@dataclass(frozen=True)
class CUNetConfig:
    """Hyperparameters of a coupled (or stacked) U-Net cascade.

    u: number of U-Nets; m: working width of every semantic block; n: width of
    each block's reusable feature export; depth: down/up levels per U-Net;
    supervisions: number of supervised heads including the final one.
    """

    u: int = 2
    m: int = 32
    n: int = 16
    depth: int = 3
    keypoints: int = 16
    in_channels: int = 1
    input_res: int = 64
    coupling: bool = True
    supervisions: int = 1
    seed: int = 0

    @property
    def heat_res(self) -> int:
        return self.input_res // 4

    def validate(self) -> None:
        if self.u < 1:
            raise ValueError(f"config: u must be >= 1, got {self.u}")
        if self.n < 1:
            raise ValueError(f"config: n must be >= 1, got {self.n}")
        if self.m < self.n:
            raise ValueError(f"config: m must be >= n, got m={self.m} n={self.n}")
        if self.depth < 1:
            raise ValueError(f"config: depth must be >= 1, got {self.depth}")
        if self.keypoints < 1:
            raise ValueError(f"config: keypoints must be >= 1, got {self.keypoints}")
        if self.in_channels < 1:
            raise ValueError(f"config: in_channels must be >= 1, got {self.in_channels}")
        if self.input_res < 4 or self.input_res % 4:
            raise ValueError(f"config: input_res must be a positive multiple of 4, "
                             f"got {self.input_res}")
        if (self.input_res // 4) % (2 ** self.depth):
            raise ValueError(
                f"config: heatmap resolution {self.input_res // 4} not divisible by "
                f"2^depth = {2 ** self.depth}")
        if not 1 <= self.supervisions <= self.u:
            raise ValueError(f"config: supervisions must be in [1, u], got "
                             f"{self.supervisions} with u={self.u}")


@dataclass(frozen=True)
class DenseUNetConfig:
    """Hyperparameters of the single dense U-Net used for parameter-matched
    comparisons: `layers` densely connected layers per semantic position with
    growth rate `growth`, compressed back to `width` channels after each block.
    """

    layers: int = 2
    growth: int = 16
    width: int = 32
    depth: int = 3
    keypoints: int = 16
    in_channels: int = 1
    input_res: int = 64
    seed: int = 0

    @property
    def heat_res(self) -> int:
        return self.input_res // 4

    def validate(self) -> None:
        if self.layers < 1:
            raise ValueError(f"dense config: layers must be >= 1, got {self.layers}")
        if self.growth < 1:
            raise ValueError(f"dense config: growth must be >= 1, got {self.growth}")
        if self.width < 1:
            raise ValueError(f"dense config: width must be >= 1, got {self.width}")
        if self.depth < 1:
            raise ValueError(f"dense config: depth must be >= 1, got {self.depth}")
        if self.keypoints < 1:
            raise ValueError(f"dense config: keypoints must be >= 1, got {self.keypoints}")
        if self.in_channels < 1:
            raise ValueError(f"dense config: in_channels must be >= 1, got {self.in_channels}")
        if self.input_res < 4 or self.input_res % 4:
            raise ValueError(f"dense config: input_res must be a positive multiple of 4, "
                             f"got {self.input_res}")
        if (self.input_res // 4) % (2 ** self.depth):
            raise ValueError(
                f"dense config: heatmap resolution {self.input_res // 4} not divisible "
                f"by 2^depth = {2 ** self.depth}")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def format_config(cfg: CUNetConfig) -> str:
    """Render the canonical ten-line document, keys in contract order."""
    return "".join(f"{k} = {_format_value(getattr(cfg, k))}\n" for k in CONFIG_KEYS)


def format_dense_config(cfg: DenseUNetConfig) -> str:
    lines = ["arch = dense\n"]
    lines += [f"{k} = {_format_value(getattr(cfg, k))}\n" for k in DENSE_KEYS]
    return "".join(lines)


def _parse_lines(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config: line {lineno} is not 'key = value': {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in out:
            raise ValueError(f"config: duplicate key {key!r} at line {lineno}")
        out[key] = value
    return out


def _parse_bool(key: str, value: str) -> bool:
    low = value.lower()
    if low in ("true", "1"):
        return True
    if low in ("false", "0"):
        return False
    raise ValueError(f"config: key {key!r} expects true/false, got {value!r}")


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"config: key {key!r} expects an integer, got {value!r}") from None


def parse_config(text: str) -> CUNetConfig:
    """Parse the ten-key document; unknown or missing keys are rejected."""
    raw = _parse_lines(text)
    raw.pop("arch", None)  # tolerated discriminator written by checkpoints
    unknown = sorted(set(raw) - set(CONFIG_KEYS))
    if unknown:
        raise ValueError(f"config: unknown keys {unknown}")
    missing = [k for k in CONFIG_KEYS if k not in raw]
    if missing:
        raise ValueError(f"config: missing keys {missing}")
    kwargs = {}
    for f in fields(CUNetConfig):
        value = raw[f.name]
        kwargs[f.name] = (_parse_bool(f.name, value) if f.name == "coupling"
                          else _parse_int(f.name, value))
    cfg = CUNetConfig(**kwargs)
    cfg.validate()
    return cfg


def parse_dense_config(text: str) -> DenseUNetConfig:
    raw = _parse_lines(text)
    if raw.pop("arch", "dense") != "dense":
        raise ValueError("config: not a dense-net document")
    unknown = sorted(set(raw) - set(DENSE_KEYS))
    if unknown:
        raise ValueError(f"dense config: unknown keys {unknown}")
    missing = [k for k in DENSE_KEYS if k not in raw]
    if missing:
        raise ValueError(f"dense config: missing keys {missing}")
    cfg = DenseUNetConfig(**{k: _parse_int(k, raw[k]) for k in DENSE_KEYS})
    cfg.validate()
    return cfg


def parse_config_file(path) -> CUNetConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
