"""Encoder-fusion-decoder network for joint trajectory and equation output.

Five trainable parts: a data encoder over (t, u) input points (the time
value itself is the positional signal), a symbol encoder over token
sequences with sinusoidal positions, a feature-fusion stack of
self-attention layers over the concatenation of both feature sequences
(with a learned modality-type embedding added per modality), a data
decoder that cross-attends query times against the fused data features,
and an autoregressive symbol decoder with the fused symbol features as
context.  A data-only variant (no symbol encoder, fusion, or symbol
decoder) supports ablations.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .nn import (CrossBlock, DecoderBlock, EncoderBlock, ShapeMismatch,
                 sinusoidal_pe)


class CheckpointMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 8
    d_ffn: int = 256
    data_enc_layers: int = 2
    sym_enc_layers: int = 2
    fusion_layers: int = 4
    data_dec_layers: int = 4
    sym_dec_layers: int = 4
    d_max: int = 3
    max_symbol_len: int = 256
    multimodal: bool = True

    @classmethod
    def full(cls, vocab_size: int, d_max: int = 5) -> "ModelConfig":
        """Full-scale preset: width 512, FFN 2048, layers 2/4/8/8/8."""
        return cls(vocab_size=vocab_size, d_model=512, n_heads=8, d_ffn=2048,
                   data_enc_layers=2, sym_enc_layers=4, fusion_layers=8,
                   data_dec_layers=8, sym_dec_layers=8, d_max=d_max)

    @classmethod
    def desk(cls, vocab_size: int, d_max: int = 3,
             multimodal: bool = True) -> "ModelConfig":
        """Single-CPU preset: width 64, FFN 256, halved stack depths."""
        return cls(vocab_size=vocab_size, d_model=64, n_heads=8, d_ffn=256,
                   d_max=d_max, multimodal=multimodal)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class FusionTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d, h, f = cfg.d_model, cfg.n_heads, cfg.d_ffn
        self.data_embed = nn.Linear(1 + cfg.d_max, d)
        self.data_encoder = nn.ModuleList(
            EncoderBlock(d, h, f) for _ in range(cfg.data_enc_layers))
        self.data_enc_norm = nn.LayerNorm(d)
        if cfg.multimodal:
            self.word_embed = nn.Embedding(cfg.vocab_size, d)
            self.sym_encoder = nn.ModuleList(
                EncoderBlock(d, h, f) for _ in range(cfg.sym_enc_layers))
            self.sym_enc_norm = nn.LayerNorm(d)
            self.modality_embed = nn.Parameter(torch.zeros(2, d))
            nn.init.normal_(self.modality_embed, std=0.02)
            self.fusion = nn.ModuleList(
                EncoderBlock(d, h, f) for _ in range(cfg.fusion_layers))
            self.fusion_norm = nn.LayerNorm(d)
            self.sym_decoder = nn.ModuleList(
                DecoderBlock(d, h, f) for _ in range(cfg.sym_dec_layers))
            self.sym_dec_norm = nn.LayerNorm(d)
            self.logits_head = nn.Linear(d, cfg.vocab_size)
        self.data_decoder = nn.ModuleList(
            CrossBlock(d, h, f) for _ in range(cfg.data_dec_layers))
        self.data_dec_norm = nn.LayerNorm(d)
        self.data_head = nn.Linear(d, cfg.d_max)

    # --- encoders -----------------------------------------------------------

    def encode_data(self, t: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
        """t: (B, L); u: (B, L, d_max) -> (B, L, d_model)."""
        if u.shape[-1] != self.cfg.d_max:
            raise ShapeMismatch(
                f"expected {self.cfg.d_max} state columns, got {u.shape[-1]}")
        x = self.data_embed(torch.cat([t[..., None], u], dim=-1))
        for block in self.data_encoder:
            x = block(x)
        return self.data_enc_norm(x)

    def encode_symbol(self, ids: torch.Tensor,
                      key_mask: torch.Tensor) -> torch.Tensor:
        """ids: (B, S) int; key_mask: (B, S) bool, True = real token."""
        if int(ids.max()) >= self.cfg.vocab_size:
            raise ShapeMismatch("token id out of vocabulary range")
        x = self.word_embed(ids.long())
        pe = sinusoidal_pe(ids.shape[1], self.cfg.d_model).to(x.dtype)
        x = x + pe[None]
        for block in self.sym_encoder:
            x = block(x, key_mask=key_mask)
        return self.sym_enc_norm(x)

    # --- fusion -------------------------------------------------------------

    def fuse(self, data_feat: torch.Tensor, sym_feat: torch.Tensor,
             sym_mask: torch.Tensor, cross_modality: bool = True
             ) -> tuple[torch.Tensor, torch.Tensor]:
        """Concatenate modalities, add type embeddings, self-attend, split.

        cross_modality=False applies a diagnostic block-diagonal mask that
        cuts all attention between the two modalities.
        """
        if data_feat.shape[-1] != sym_feat.shape[-1]:
            raise ShapeMismatch("modality widths differ")
        b, ld, _ = data_feat.shape
        ls = sym_feat.shape[1]
        x = torch.cat([data_feat + self.modality_embed[0],
                       sym_feat + self.modality_embed[1]], dim=1)
        key_mask = torch.cat(
            [torch.ones(b, ld, dtype=torch.bool, device=x.device), sym_mask],
            dim=1)
        if cross_modality:
            for block in self.fusion:
                x = block(x, key_mask=key_mask)
            x = self.fusion_norm(x)
        else:
            xd, xs = x[:, :ld], x[:, ld:]
            for block in self.fusion:
                xd = block(xd)
                xs = block(xs, key_mask=sym_mask)
            xd, xs = self.fusion_norm(xd), self.fusion_norm(xs)
            return xd, xs
        return x[:, :ld], x[:, ld:]

    # --- data decoder -------------------------------------------------------

    def _embed_queries(self, t_query: torch.Tensor) -> torch.Tensor:
        zeros = torch.zeros(*t_query.shape, self.cfg.d_max,
                            dtype=t_query.dtype, device=t_query.device)
        return self.data_embed(torch.cat([t_query[..., None], zeros], dim=-1))

    def _decode_data_batched(self, memory: torch.Tensor,
                             t_query: torch.Tensor) -> torch.Tensor:
        x = self._embed_queries(t_query)
        for block in self.data_decoder:
            x = block(x, memory)
        return self.data_head(self.data_dec_norm(x))

    def decode_data(self, memory: torch.Tensor,
                    t_query: torch.Tensor) -> torch.Tensor:
        """memory: (B, L, d); t_query: (B, Q) -> predictions (B, Q, d_max).

        Queries never interact: this path evaluates them one at a time
        (identical tensor shapes per query), so the result for a query is
        bit-identical no matter which other queries share the call.
        """
        if t_query.numel() == 0:
            raise ShapeMismatch("need at least one query time")
        cols = [self._decode_data_batched(memory, t_query[:, q:q + 1])
                for q in range(t_query.shape[1])]
        return torch.cat(cols, dim=1)

    # --- symbol decoder -----------------------------------------------------

    def decode_symbol_teacher(self, memory: torch.Tensor,
                              memory_mask: torch.Tensor,
                              target_in: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits, (B, S, vocab); target_in starts with SOS."""
        x = self.word_embed(target_in.long())
        pe = sinusoidal_pe(target_in.shape[1], self.cfg.d_model).to(x.dtype)
        x = x + pe[None]
        for block in self.sym_decoder:
            x = block(x, memory, memory_mask=memory_mask)
        return self.logits_head(self.sym_dec_norm(x))

    @torch.no_grad()
    def decode_symbol_greedy(self, memory: torch.Tensor,
                             memory_mask: torch.Tensor, sos_id: int,
                             eos_id: int, max_len: int | None = None
                             ) -> tuple[list[list[int]], list[bool]]:
        """Greedy autoregressive decoding.

        Returns per-sample token ids (without SOS/EOS) and a truncation
        flag (True when max_len was hit before EOS).
        """
        max_len = max_len or self.cfg.max_symbol_len
        b = memory.shape[0]
        device = memory.device
        seq = torch.full((b, 1), sos_id, dtype=torch.long, device=device)
        done = torch.zeros(b, dtype=torch.bool, device=device)
        for _ in range(max_len):
            logits = self.decode_symbol_teacher(memory, memory_mask, seq)
            nxt = logits[:, -1].argmax(dim=-1)
            nxt = torch.where(done, torch.full_like(nxt, eos_id), nxt)
            seq = torch.cat([seq, nxt[:, None]], dim=1)
            done = done | (nxt == eos_id)
            if bool(done.all()):
                break
        out, truncated = [], []
        for row, fin in zip(seq[:, 1:].tolist(), done.tolist()):
            ids = []
            for tok in row:
                if tok == eos_id:
                    break
                ids.append(tok)
            out.append(ids)
            truncated.append(not fin)
        return out, truncated

    # --- full pipeline ------------------------------------------------------

    def forward(self, t_input, u_input, t_query, symbol_input=None,
                symbol_mask=None, target_in=None, per_query: bool = False):
        """Returns (data predictions, symbol logits or None)."""
        data_feat = self.encode_data(t_input, u_input)
        logits = None
        if self.cfg.multimodal:
            sym_feat = self.encode_symbol(symbol_input, symbol_mask)
            fused_data, fused_sym = self.fuse(data_feat, sym_feat, symbol_mask)
            if target_in is not None:
                logits = self.decode_symbol_teacher(fused_sym, symbol_mask,
                                                    target_in)
        else:
            fused_data = data_feat
        if per_query:
            pred = self.decode_data(fused_data, t_query)
        else:
            pred = self._decode_data_batched(fused_data, t_query)
        return pred, logits

    def fused_features(self, t_input, u_input, symbol_input, symbol_mask):
        data_feat = self.encode_data(t_input, u_input)
        if not self.cfg.multimodal:
            return data_feat, None
        sym_feat = self.encode_symbol(symbol_input, symbol_mask)
        return self.fuse(data_feat, sym_feat, symbol_mask)

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def export_attention(model: FusionTransformer, t_input, u_input,
                     symbol_input, symbol_mask) -> dict[tuple[int, int],
                                                        np.ndarray]:
    """Fusion attention maps for one batch: {(layer, head): (L, L) array}.

    Rows are softmax outputs and therefore sum to one.
    """
    if not model.cfg.multimodal:
        raise ValueError("data-only models have no fusion stack")
    for block in model.fusion:
        block.attn.record_weights = True
    try:
        with torch.no_grad():
            model.fused_features(t_input, u_input, symbol_input, symbol_mask)
    finally:
        maps = {}
        for li, block in enumerate(model.fusion):
            w = block.attn.last_weights
            if w is not None:
                for hi in range(w.shape[1]):
                    maps[(li, hi)] = w[0, hi].cpu().numpy()
            block.attn.record_weights = False
            block.attn.last_weights = None
    return maps


# --- checkpoint format ------------------------------------------------------
#
# header: magic "ODFC" | u32 version | u32 json length | json header
#         (config dict, config hash, vocab hash, parameter names/shapes)
# body:   named blobs, little-endian f64, in header order

CKPT_MAGIC = b"ODFC"
CKPT_VERSION = 1


def save_checkpoint(path, model: FusionTransformer, vocab_hash: str = "",
                    extra: dict | None = None) -> None:
    names, shapes = [], {}
    state = model.state_dict()
    for name, tensor in state.items():
        names.append(name)
        shapes[name] = list(tensor.shape)
    header = {"config": model.cfg.to_dict(), "config_hash": model.cfg.hash(),
              "vocab_hash": vocab_hash, "params": names, "shapes": shapes,
              "extra": extra or {}}
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for name in names:
            arr = state[name].detach().cpu().numpy().astype("<f8")
            fh.write(arr.tobytes())


def load_checkpoint(path, expected_vocab_hash: str | None = None
                    ) -> tuple[FusionTransformer, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CKPT_MAGIC:
            raise CheckpointMismatch(f"bad magic {magic!r}")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != CKPT_VERSION:
            raise CheckpointMismatch(f"unsupported version {version}")
        header = json.loads(fh.read(hlen).decode())
        if expected_vocab_hash is not None and \
                header["vocab_hash"] != expected_vocab_hash:
            raise CheckpointMismatch(
                "checkpoint was trained against a different vocabulary")
        cfg = ModelConfig(**header["config"])
        model = FusionTransformer(cfg)
        state = {}
        for name in header["params"]:
            shape = header["shapes"][name]
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * n)
            if len(raw) < 8 * n:
                raise CheckpointMismatch(f"truncated blob for {name}")
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
            state[name] = torch.from_numpy(arr.copy()).to(torch.float32)
        model.load_state_dict(state)
    return model, header
