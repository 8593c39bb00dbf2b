"""Seq2seq transformer backbone over the joined word + item vocabulary.

Word and item embeddings live in separate tables so the optimizer can place
them in different learning-rate groups; lookups and the tied output
projection run over their concatenation, with item tokens occupying the
contiguous block starting at ``base_vocab_size``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class BackboneConfig:
    base_vocab_size: int
    item_vocab_size: int
    pad_id: int
    bos_id: int
    eos_id: int
    d_model: int = 256
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    ffn_dim: int = 512
    max_positions: int = 1024
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.base_vocab_size <= 0 or self.item_vocab_size < 0:
            raise ValueError("vocabulary sizes must be positive")

    @property
    def vocab_size(self) -> int:
        return self.base_vocab_size + self.item_vocab_size


class Seq2SeqBackbone(nn.Module):
    """Encoder-decoder transformer with learned positions and tied output."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.base_embed = nn.Embedding(cfg.base_vocab_size, cfg.d_model)
        self.item_embed = nn.Embedding(max(cfg.item_vocab_size, 1), cfg.d_model)
        self.enc_pos = nn.Embedding(cfg.max_positions, cfg.d_model)
        self.dec_pos = nn.Embedding(cfg.max_positions, cfg.d_model)
        enc_layer = nn.TransformerEncoderLayer(
            cfg.d_model, cfg.heads, cfg.ffn_dim, cfg.dropout,
            batch_first=True, norm_first=True)
        self.encoder = nn.TransformerEncoder(
            enc_layer, cfg.encoder_layers, norm=nn.LayerNorm(cfg.d_model),
            enable_nested_tensor=False)
        dec_layer = nn.TransformerDecoderLayer(
            cfg.d_model, cfg.heads, cfg.ffn_dim, cfg.dropout,
            batch_first=True, norm_first=True)
        self.decoder = nn.TransformerDecoder(
            dec_layer, cfg.decoder_layers, norm=nn.LayerNorm(cfg.d_model))
        self.scale = math.sqrt(cfg.d_model)

    def embedding_matrix(self) -> torch.Tensor:
        if self.cfg.item_vocab_size == 0:
            return self.base_embed.weight
        return torch.cat(
            [self.base_embed.weight,
             self.item_embed.weight[: self.cfg.item_vocab_size]], dim=0)

    def _embed(self, ids: torch.Tensor, pos_table: nn.Embedding) -> torch.Tensor:
        if ids.dim() != 2:
            raise ValueError(f"expected (batch, length) ids, got shape {tuple(ids.shape)}")
        length = ids.shape[1]
        if length == 0:
            raise ValueError("empty sequence")
        if length > self.cfg.max_positions:
            raise ValueError(f"sequence length {length} exceeds max_positions "
                             f"{self.cfg.max_positions}")
        if int(ids.max()) >= self.cfg.vocab_size:
            raise ValueError("token id outside the joined vocabulary")
        tok = F.embedding(ids, self.embedding_matrix()) * self.scale
        pos = pos_table(torch.arange(length, device=ids.device))
        return tok + pos

    def encode(self, src_ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (hidden, attention_mask); mask is True on real tokens."""
        if src_ids.dim() != 2:
            raise ValueError(f"expected (batch, length) ids, got shape "
                             f"{tuple(src_ids.shape)}")
        attention_mask = src_ids != self.cfg.pad_id
        if not attention_mask.any(dim=1).all():
            raise ValueError("encoder batch contains an all-padding row")
        hidden = self.encoder(self._embed(src_ids, self.enc_pos),
                              src_key_padding_mask=~attention_mask)
        return hidden, attention_mask

    def decode_hidden(self, tgt_ids: torch.Tensor, memory: torch.Tensor,
                      memory_mask: torch.Tensor) -> torch.Tensor:
        length = tgt_ids.shape[1]
        # bool mask keeps dtype aligned with the key padding masks
        causal = torch.triu(
            torch.ones(length, length, dtype=torch.bool, device=tgt_ids.device),
            diagonal=1)
        return self.decoder(self._embed(tgt_ids, self.dec_pos), memory,
                            tgt_mask=causal,
                            tgt_key_padding_mask=(tgt_ids == self.cfg.pad_id),
                            memory_key_padding_mask=~memory_mask)

    def logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return hidden @ self.embedding_matrix().t()

    def forward(self, src_ids: torch.Tensor, tgt_ids: torch.Tensor) -> torch.Tensor:
        memory, mask = self.encode(src_ids)
        return self.logits(self.decode_hidden(tgt_ids, memory, mask))
