"""Flat run configuration covering every module, file-loadable.

Config files are plain ``key=value`` lines (# comments allowed). Unknown
keys are rejected. The file key for the recency decay is ``lambda``; the
dataclass field is ``decay`` because of the Python keyword. Defaults follow
the reference hyperparameters (mu 0.5, lambda 1.5, gamma 1.0, beam 4 with
2 groups, warmup 1000, lr 5e-3 / 5e-5) and a base-size 6+6-layer backbone.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import BackboneConfig
from .generator import BiasMode, DecodeConfig, DecodeStrategy
from .model import ModelConfig, Variant
from .recommender import ColdStartPolicy, FusionConfig
from .training import TrainConfig

ENV_DATA_DIR = "CRS_DATA_DIR"

# config-file key <-> field name, for names Python reserves
FIELD_TO_KEY = {"decay": "lambda"}
KEY_TO_FIELD = {v: k for k, v in FIELD_TO_KEY.items()}


@dataclass
class RunConfig:
    # data
    dataset: str = "redial"
    data_path: str = ""
    kg_path: str = ""
    alias_path: str = ""
    out_dir: str = "runs/default"
    variant: str = "full"
    seed: int = 0
    min_count: int = 1
    context_max_len: int = 256
    include_text_entities: bool = True
    exclude_seen: bool = False
    # fusion
    mu: float = 0.5
    decay: float = 1.5
    cold_start: str = "context_only"
    # decoding
    strategy: str = "diverse_beam"
    beam: int = 4
    groups: int = 2
    length_penalty: float = 1.0
    max_new_tokens: int = 40
    bias_trigger_k: int = 50
    bias_mode: str = "prob"
    diversity_strength: float = 0.5
    # training
    gamma: float = 1.0
    lr_new: float = 5e-3
    lr_pretrained: float = 5e-5
    warmup_updates: int = 1000
    max_tokens_per_batch: int = 4096
    update_frequency: int = 4
    epochs: int = 5
    selection_k: int = 50
    stop_gradient_context: bool = False
    # model sizes
    d_model: int = 768
    encoder_layers: int = 6
    decoder_layers: int = 6
    heads: int = 12
    ffn_dim: int = 3072
    max_positions: int = 1024
    dropout: float = 0.1
    entity_dim: int = 128
    rgcn_layers: int = 1
    num_bases: int | None = None
    context_hidden: bool = False
    mask_context: bool = True

    # --- sub-config builders ---

    def fusion(self) -> FusionConfig:
        return FusionConfig(mu=self.mu, decay=self.decay,
                            cold_start=ColdStartPolicy(self.cold_start))

    def decode(self) -> DecodeConfig:
        return DecodeConfig(strategy=DecodeStrategy(self.strategy),
                            beam_size=self.beam, groups=self.groups,
                            length_penalty=self.length_penalty,
                            max_new_tokens=self.max_new_tokens,
                            bias_trigger_k=self.bias_trigger_k,
                            diversity_strength=self.diversity_strength,
                            bias_mode=BiasMode(self.bias_mode))

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, gamma=self.gamma,
                           lr_new=self.lr_new, lr_pretrained=self.lr_pretrained,
                           warmup_updates=self.warmup_updates,
                           max_tokens_per_batch=self.max_tokens_per_batch,
                           update_frequency=self.update_frequency,
                           seed=self.seed, selection_k=self.selection_k,
                           stop_gradient_context=self.stop_gradient_context)

    def model_config(self, base_vocab_size: int, item_vocab_size: int,
                     pad_id: int, bos_id: int, eos_id: int) -> ModelConfig:
        backbone = BackboneConfig(
            base_vocab_size=base_vocab_size, item_vocab_size=item_vocab_size,
            pad_id=pad_id, bos_id=bos_id, eos_id=eos_id,
            d_model=self.d_model, encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers, heads=self.heads,
            ffn_dim=self.ffn_dim, max_positions=self.max_positions,
            dropout=self.dropout)
        return ModelConfig(backbone=backbone, entity_dim=self.entity_dim,
                           rgcn_layers=self.rgcn_layers,
                           num_bases=self.num_bases,
                           variant=Variant(self.variant),
                           context_hidden=self.context_hidden,
                           mask_context=self.mask_context, seed=self.seed)

    def eval_ks(self) -> list[int]:
        if self.dataset == "redial":
            return [1, 10, 50]
        if self.dataset == "opendialkg":
            return [1, 3, 5, 10, 25]
        return [1, 3, 5, 10, 25, 50]

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            key = FIELD_TO_KEY.get(f.name, f.name)
            out[key] = getattr(self, f.name)
        return out


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _cast(field: dataclasses.Field, raw: str):
    text = raw.strip()
    if field.name == "num_bases":
        return None if text.lower() in ("none", "") else int(text)
    if field.type in ("int", int):
        return int(text)
    if field.type in ("float", float):
        return float(text)
    if field.type in ("bool", bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {text!r}")
    return text


def config_from_payload(payload: dict) -> RunConfig:
    """Rebuild a RunConfig from an echoed/checkpointed key-value mapping."""
    cfg = RunConfig()
    for key, value in payload.items():
        name = KEY_TO_FIELD.get(key, key)
        if name not in _FIELDS:
            raise ValueError(f"unknown config key {key!r}")
        setattr(cfg, name, value)
    return cfg


def load_config(path: str | Path | None = None,
                overrides: dict | None = None,
                base: RunConfig | None = None) -> RunConfig:
    """Defaults (or `base`), then file values, then overrides; unknown keys rejected."""
    cfg = base if base is not None else RunConfig()
    if path is not None:
        for lineno, line in enumerate(
                Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, raw = line.partition("=")
            key = key.strip()
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            name = KEY_TO_FIELD.get(key, key)
            if name not in _FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            setattr(cfg, name, _cast(_FIELDS[name], raw))
    for name, value in (overrides or {}).items():
        if name not in _FIELDS:
            raise ValueError(f"unknown config override {name!r}")
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def write_config(path: str | Path, cfg: RunConfig) -> None:
    """Echo the effective config; stable bytes for identical configs."""
    lines = []
    for key, value in sorted(cfg.to_dict().items()):
        rendered = "none" if value is None else repr(value) \
            if isinstance(value, float) else str(value)
        lines.append(f"{key}={rendered}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resolve_path(path: str | Path) -> Path:
    """Relative paths resolve under CRS_DATA_DIR when it is set."""
    path = Path(path)
    root = os.environ.get(ENV_DATA_DIR)
    if root and not path.is_absolute():
        return Path(root) / path
    return path
