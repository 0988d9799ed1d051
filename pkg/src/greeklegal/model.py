"""Compact transformer encoder with MLM, token-tagging and sentence heads.

Post-layer-norm residual blocks with exact-GELU feed-forwards and learned
position embeddings. The MLM decoder is weight-tied to the input embedding:
the logits are F.linear(hidden, embedding_weight) plus a free bias, so there
is exactly one vocab-sized matrix in the model. Dropout sits on the embedding
sum and after each attention / feed-forward output; nowhere else.

Checkpoints are a config descriptor (JSON) next to a named-array container
(npz); loading restores bit-identical weights and re-ties the decoder.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .masking import IGNORE_INDEX, MaskedBatch

CHECKPOINT_VERSION = 1
CONFIG_FILE = "config.json"
WEIGHTS_FILE = "weights.npz"

INIT_STD = 0.02


class HeadMismatchError(RuntimeError):
    """A task asked for a head the checkpoint lacks or sized differently."""


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_layers: int = 4
    hidden_dim: int = 256
    num_heads: int = 4
    ffn_dim: int = 1024
    max_positions: int = 512
    dropout: float = 0.1
    num_tags: int | None = None
    num_labels: int | None = None
    # Accepted for config compatibility; compute stays float32 at this scale.
    mixed_precision: bool = False

    def __post_init__(self) -> None:
        if min(self.vocab_size, self.num_layers, self.hidden_dim, self.num_heads,
               self.ffn_dim, self.max_positions) < 1:
            raise ValueError("model dimensions must be positive")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        for n in (self.num_tags, self.num_labels):
            if n is not None and n < 1:
                raise ValueError("head sizes must be positive when set")


class SelfAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.num_heads = config.num_heads
        self.head_dim = config.hidden_dim // config.num_heads
        self.query = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.key = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.value = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.output = nn.Linear(config.hidden_dim, config.hidden_dim)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        b, length, hidden = x.shape

        def heads(t: torch.Tensor) -> torch.Tensor:
            return t.view(b, length, self.num_heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(self.query(x)), heads(self.key(x)), heads(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        # Padding is hidden on the key side only: masked keys get probability
        # exactly zero, so pad content cannot leak into real positions.
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        ctx = torch.softmax(scores, dim=-1) @ v
        ctx = ctx.transpose(1, 2).reshape(b, length, hidden)
        return self.output(ctx)


class EncoderLayer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.attention = SelfAttention(config)
        self.attn_norm = nn.LayerNorm(config.hidden_dim)
        self.ffn_in = nn.Linear(config.hidden_dim, config.ffn_dim)
        self.ffn_out = nn.Linear(config.ffn_dim, config.hidden_dim)
        self.ffn_norm = nn.LayerNorm(config.hidden_dim)
        self.drop = nn.Dropout(config.dropout)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        x = self.attn_norm(x + self.drop(self.attention(x, key_mask)))
        ffn = self.ffn_out(F.gelu(self.ffn_in(x)))
        return self.ffn_norm(x + self.drop(ffn))


class Embeddings(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.tokens = nn.Embedding(config.vocab_size, config.hidden_dim)
        self.positions = nn.Embedding(config.max_positions, config.hidden_dim)
        self.norm = nn.LayerNorm(config.hidden_dim)
        self.drop = nn.Dropout(config.dropout)

    def forward(self, input_ids: torch.Tensor) -> torch.Tensor:
        length = input_ids.shape[1]
        pos = torch.arange(length, device=input_ids.device)
        return self.drop(self.norm(self.tokens(input_ids) + self.positions(pos)))


class MlmHead(nn.Module):
    """Transform then project back onto the (tied) embedding matrix."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.dense = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.norm = nn.LayerNorm(config.hidden_dim)
        self.bias = nn.Parameter(torch.zeros(config.vocab_size))

    def forward(self, hidden: torch.Tensor, embedding_weight: torch.Tensor) -> torch.Tensor:
        hidden = self.norm(F.gelu(self.dense(hidden)))
        return F.linear(hidden, embedding_weight, self.bias)


class EncoderModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.embeddings = Embeddings(config)
        self.layers = nn.ModuleList(EncoderLayer(config) for _ in range(config.num_layers))
        self.mlm_head = MlmHead(config)
        self.token_head = (
            nn.Linear(config.hidden_dim, config.num_tags) if config.num_tags else None
        )
        self.seq_head = (
            nn.Linear(config.hidden_dim, config.num_labels) if config.num_labels else None
        )

    def encode(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        if input_ids.shape[1] > self.config.max_positions:
            raise ValueError(
                f"sequence length {input_ids.shape[1]} exceeds {self.config.max_positions}"
            )
        key_mask = attention_mask.bool()
        x = self.embeddings(input_ids)
        for layer in self.layers:
            x = layer(x, key_mask)
        return x

    def mlm_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        return self.mlm_head(hidden, self.embeddings.tokens.weight)


def init_model(config: ModelConfig, seed: int = 0) -> EncoderModel:
    """Build a model with N(0, 0.02) weights, unit norms and zero biases.

    Draws come from a private generator in module-definition order, so the
    same (config, seed) always yields bit-identical weights.
    """
    model = EncoderModel(config)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                module.weight.normal_(0.0, INIT_STD, generator=gen)
                if isinstance(module, nn.Linear) and module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.LayerNorm):
                module.weight.fill_(1.0)
                module.bias.zero_()
        model.mlm_head.bias.zero_()
    return model


@dataclass
class MlmOutput:
    loss: torch.Tensor
    logits: torch.Tensor
    selected_count: int
    # True when no position carried a label; the loss is then defined as 0.
    all_ignored: bool


def _tensors(batch: MaskedBatch) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    return (
        torch.as_tensor(batch.input_ids, dtype=torch.long),
        torch.as_tensor(batch.labels, dtype=torch.long),
        torch.as_tensor(batch.attention_mask, dtype=torch.long),
    )


def forward_mlm(model: EncoderModel, batch: MaskedBatch) -> MlmOutput:
    """Mean cross-entropy over labeled positions; empty label sets give loss 0."""
    input_ids, labels, attention_mask = _tensors(batch)
    hidden = model.encode(input_ids, attention_mask)
    logits = model.mlm_logits(hidden)
    selected = int((labels != IGNORE_INDEX).sum())
    if selected == 0:
        loss = logits.sum() * 0.0
        return MlmOutput(loss=loss, logits=logits, selected_count=0, all_ignored=True)
    loss = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=IGNORE_INDEX
    )
    return MlmOutput(loss=loss, logits=logits, selected_count=selected, all_ignored=False)


def forward_token_cls(
    model: EncoderModel, input_ids: torch.Tensor, attention_mask: torch.Tensor
) -> torch.Tensor:
    """Per-position tag logits, shape (batch, length, num_tags)."""
    if model.token_head is None:
        raise HeadMismatchError("model has no token-classification head")
    return model.token_head(model.encode(input_ids, attention_mask))


def forward_seq_cls(
    model: EncoderModel, input_ids: torch.Tensor, attention_mask: torch.Tensor
) -> torch.Tensor:
    """Sentence logits from the first position's hidden state."""
    if model.seq_head is None:
        raise HeadMismatchError("model has no sequence-classification head")
    hidden = model.encode(input_ids, attention_mask)
    return model.seq_head(hidden[:, 0, :])


def token_cls_loss(logits: torch.Tensor, tag_ids: torch.Tensor) -> torch.Tensor:
    """CE over positions whose tag id is not IGNORE_INDEX (pads, continuations)."""
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), tag_ids.reshape(-1), ignore_index=IGNORE_INDEX
    )


def save_checkpoint(
    model: EncoderModel,
    out_dir: str | Path,
    tokenizer_fingerprint: str | None = None,
    extra: dict | None = None,
) -> Path:
    """Write config.json plus weights.npz (one named array per tensor)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    descriptor = {
        "format_version": CHECKPOINT_VERSION,
        "model": asdict(model.config),
        "tokenizer_fingerprint": tokenizer_fingerprint,
        "extra": extra or {},
    }
    (out / CONFIG_FILE).write_text(
        json.dumps(descriptor, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    np.savez(out / WEIGHTS_FILE, **arrays)
    return out


def load_checkpoint(
    checkpoint_dir: str | Path,
    num_tags: int | None = None,
    num_labels: int | None = None,
    head_seed: int = 0,
) -> tuple[EncoderModel, dict]:
    """Restore a checkpoint, optionally re-heading it for a new task.

    Passing num_tags / num_labels different from the stored config replaces
    that head with a freshly initialized one (seeded); all other weights load
    bit-identically. Returns (model, descriptor).
    """
    src = Path(checkpoint_dir)
    descriptor = json.loads((src / CONFIG_FILE).read_text(encoding="utf-8"))
    if descriptor.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {descriptor.get('format_version')}")
    stored = ModelConfig(**descriptor["model"])
    config = stored
    if num_tags is not None:
        config = replace(config, num_tags=num_tags)
    if num_labels is not None:
        config = replace(config, num_labels=num_labels)

    model = init_model(config, seed=head_seed)
    with np.load(src / WEIGHTS_FILE) as bundle:
        state = {name: torch.from_numpy(bundle[name]) for name in bundle.files}
    target = model.state_dict()
    drop = {
        name
        for name in state
        if name in target and state[name].shape != target[name].shape
    }
    for name in drop:
        del state[name]
    missing, unexpected = model.load_state_dict(state, strict=False)
    allowed = {n for n in missing if n.startswith(("token_head", "seq_head"))} | drop
    bad_missing = [n for n in missing if n not in allowed]
    bad_unexpected = [n for n in unexpected if not n.startswith(("token_head", "seq_head"))]
    if bad_missing or bad_unexpected:
        raise ValueError(f"checkpoint mismatch: missing={bad_missing} unexpected={bad_unexpected}")
    return model, descriptor
