"""Byte-level decoder-only transformer with individually removable layers."""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor

log = logging.getLogger(__name__)

BOS, EOS, PAD = 256, 257, 258
BYTE_VOCAB = 259

LAYER_PARAM_NAMES = (
    "ln1_g", "ln1_b", "wq", "wk", "wv", "wo",
    "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
)
EMBED_PARAM_NAMES = ("tok_emb", "pos_emb")
HEAD_PARAM_NAMES = ("lnf_g", "lnf_b", "w_head")


def encode(text: str, bos: bool = True) -> np.ndarray:
    """UTF-8 bytes as token ids, optionally prefixed by BOS."""
    ids = list(text.encode("utf-8"))
    if bos:
        ids.insert(0, BOS)
    return np.asarray(ids, dtype=np.int64)


def decode(ids: Iterable[int]) -> str:
    return bytes(int(i) for i in ids if int(i) < 256).decode("utf-8", errors="replace")


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 6
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    vocab_size: int = BYTE_VOCAB
    max_seq_len: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.n_layers < 2:
            raise ValueError(f"n_layers must be >= 2, got {self.n_layers}")
        for name in ("d_model", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"n_heads={self.n_heads} does not divide d_model={self.d_model}")
        if self.vocab_size < BYTE_VOCAB:
            raise ValueError(f"vocab_size must be >= {BYTE_VOCAB}, got {self.vocab_size}")

    def to_dict(self) -> dict:
        return asdict(self)


def layer_param_count(cfg: ModelConfig) -> int:
    d, f = cfg.d_model, cfg.d_ff
    return 4 * d * d + 4 * d + d * f + f + f * d + d


def base_param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count of a freshly initialised model."""
    d, v = cfg.d_model, cfg.vocab_size
    embed = v * d + cfg.max_seq_len * d
    head = 2 * d + d * v
    return embed + cfg.n_layers * layer_param_count(cfg) + head


class DecoderLayer:
    """Pre-norm attention + feed-forward block.

    ``original_index`` is the layer's depth in the unpruned model and never
    changes when other layers are removed.
    """

    def __init__(self, params: dict[str, Tensor], original_index: int):
        missing = set(LAYER_PARAM_NAMES) - set(params)
        if missing:
            raise ValueError(f"layer parameters missing: {sorted(missing)}")
        self.params = params
        self.original_index = int(original_index)

    def parameters(self) -> list[Tensor]:
        return [self.params[n] for n in LAYER_PARAM_NAMES]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, x: Tensor, n_heads: int, mask: np.ndarray) -> Tensor:
        p = self.params
        B, T, D = x.shape
        dh = D // n_heads

        h = ag.layernorm(x) * p["ln1_g"] + p["ln1_b"]

        def heads(w):
            return (h @ w).reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

        q, k, v = heads(p["wq"]), heads(p["wk"]), heads(p["wv"])
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        att = ag.softmax(scores, mask=mask) @ v
        att = att.transpose(0, 2, 1, 3).reshape(B, T, D)
        x = x + att @ p["wo"]

        h2 = ag.layernorm(x) * p["ln2_g"] + p["ln2_b"]
        ff = ag.gelu(h2 @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]
        return x + ff


class TransformerModel:
    def __init__(
        self,
        config: ModelConfig,
        embed: dict[str, Tensor],
        layers: list[DecoderLayer],
        head: dict[str, Tensor],
    ):
        self.config = config
        self.embed = embed
        self.layers = list(layers)
        self.head = head
        idx = [layer.original_index for layer in self.layers]
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate original_index values: {idx}")

    @property
    def original_indices(self) -> list[int]:
        return [layer.original_index for layer in self.layers]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"embed.{n}", self.embed[n]) for n in EMBED_PARAM_NAMES]
        for layer in self.layers:
            out += [(f"layers.{layer.original_index}.{n}", layer.params[n]) for n in LAYER_PARAM_NAMES]
        out += [(f"head.{n}", self.head[n]) for n in HEAD_PARAM_NAMES]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        ag.zero_grads(self.parameters())

    def copy(self) -> "TransformerModel":
        return copy.deepcopy(self)

    def __call__(self, tokens, return_hidden: bool = False):
        return forward(self, tokens, return_hidden=return_hidden)


def init_model(config: ModelConfig) -> TransformerModel:
    """Seeded small-variance initialisation; identical seeds give identical weights."""
    rng = np.random.default_rng(config.seed)
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    std = 0.02
    resid_std = std / np.sqrt(2 * config.n_layers)

    def normal(shape, s=std):
        return Tensor(rng.normal(0.0, s, size=shape), requires_grad=True)

    def const(shape, value):
        return Tensor(np.full(shape, value), requires_grad=True)

    embed = {"tok_emb": normal((v, d)), "pos_emb": normal((config.max_seq_len, d))}
    layers = []
    for i in range(config.n_layers):
        params = {
            "ln1_g": const(d, 1.0), "ln1_b": const(d, 0.0),
            "wq": normal((d, d)), "wk": normal((d, d)), "wv": normal((d, d)),
            "wo": normal((d, d), resid_std),
            "ln2_g": const(d, 1.0), "ln2_b": const(d, 0.0),
            "w1": normal((d, f)), "b1": const(f, 0.0),
            "w2": normal((f, d), resid_std), "b2": const(d, 0.0),
        }
        layers.append(DecoderLayer(params, original_index=i))
    head = {"lnf_g": const(d, 1.0), "lnf_b": const(d, 0.0), "w_head": normal((d, v))}
    return TransformerModel(config, embed, layers, head)


def _as_batch(model: TransformerModel, tokens) -> tuple[np.ndarray, bool]:
    ids = np.asarray(tokens, dtype=np.int64)
    squeeze = ids.ndim == 1
    if squeeze:
        ids = ids[None, :]
    if ids.ndim != 2:
        raise ValueError(f"tokens must be 1-D or 2-D, got shape {ids.shape}")
    T = ids.shape[1]
    if T == 0:
        raise ValueError("token sequence is empty")
    if T > model.config.max_seq_len:
        raise ValueError(f"sequence length {T} exceeds max_seq_len={model.config.max_seq_len}")
    if ids.min() < 0 or ids.max() >= model.config.vocab_size:
        raise ValueError("token id out of vocabulary range")
    return ids, squeeze


def embed_tokens(model: TransformerModel, ids: np.ndarray) -> Tensor:
    T = ids.shape[1]
    return ag.embedding(model.embed["tok_emb"], ids) + ag.embedding(model.embed["pos_emb"], np.arange(T))


def apply_head(model: TransformerModel, x: Tensor) -> Tensor:
    h = model.head
    return (ag.layernorm(x) * h["lnf_g"] + h["lnf_b"]) @ h["w_head"]


def causal_mask(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool))


def forward(model: TransformerModel, tokens, return_hidden: bool = False):
    """Causal logits of shape [T, V] (or [B, T, V] for a 2-D batch).

    With ``return_hidden`` also returns the residual stream entering each
    layer plus the final one (``len(layers) + 1`` arrays).
    """
    ids, squeeze = _as_batch(model, tokens)
    mask = causal_mask(ids.shape[1])
    x = embed_tokens(model, ids)
    hidden = [x.data]
    for layer in model.layers:
        x = layer(x, model.config.n_heads, mask)
        hidden.append(x.data)
    logits = apply_head(model, x)
    if squeeze:
        logits = logits.reshape(logits.shape[1:])
        hidden = [h[0] for h in hidden]
    return (logits, hidden) if return_hidden else logits


def logits_np(model: TransformerModel, tokens) -> np.ndarray:
    with ag.no_grad():
        return forward(model, tokens).data


def lm_loss(model: TransformerModel, tokens) -> Tensor:
    """Next-token cross entropy with the sequence as both input and label."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.shape[-1] < 2:
        raise ValueError("need at least 2 tokens for a next-token loss")
    logits = forward(model, ids[..., :-1])
    return ag.cross_entropy(logits, ids[..., 1:])


def sft_gradients(
    model: TransformerModel,
    sample,
    update_lr: float | None = None,
) -> dict[int, np.ndarray]:
    """Per-layer flattened gradient of the SFT loss, keyed by original index.

    ``sample`` is a string or a token-id sequence. Weights are left
    untouched. If ``update_lr`` is given, the returned vectors are the
    one-step SGD update ``-update_lr * grad`` instead of the raw gradient.
    """
    tokens = encode(sample) if isinstance(sample, str) else np.asarray(sample, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size < 2:
        raise ValueError("sft_gradients needs a single sequence of at least 2 tokens")
    model.zero_grad()
    lm_loss(model, tokens).backward()
    out = {}
    for layer in model.layers:
        g = np.concatenate([
            (p.grad if p.grad is not None else np.zeros_like(p.data)).ravel()
            for p in layer.parameters()
        ])
        out[layer.original_index] = g if update_lr is None else -update_lr * g
    model.zero_grad()
    return out


def remove_layer(model: TransformerModel, position: int) -> TransformerModel:
    """Return a copy of ``model`` without the layer at current ``position``."""
    n = len(model.layers)
    if not 0 <= position < n:
        raise IndexError(f"layer position {position} out of range for {n} layers")
    if n < 2:
        raise ValueError("cannot remove the last remaining layer")
    new = model.copy()
    del new.layers[position]
    return new


def sample_batch(data: np.ndarray, rng: np.random.Generator, batch: int, length: int) -> np.ndarray:
    starts = rng.integers(0, len(data) - length, size=batch)
    return np.stack([data[s:s + length] for s in starts])


def train_toy(
    model: TransformerModel,
    corpus: str | bytes,
    steps: int,
    learning_rate: float = 0.05,
    *,
    batch_size: int = 8,
    seq_len: int | None = None,
    momentum: float = 0.9,
    clip_norm: float = 1.0,
    seed: int | None = None,
    callback: Callable[[int, float], None] | None = None,
) -> TransformerModel:
    """SGD with heavy-ball momentum and global-norm gradient clipping.

    Returns a trained copy; the input model is not modified.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    data = np.frombuffer(corpus.encode("utf-8") if isinstance(corpus, str) else corpus, dtype=np.uint8)
    if data.size == 0:
        raise ValueError("training corpus is empty")
    length = min(seq_len or model.config.max_seq_len, model.config.max_seq_len) + 1
    if data.size <= length:
        raise ValueError(f"corpus of {data.size} bytes is shorter than a training window ({length})")
    data = data.astype(np.int64)

    model = model.copy()
    params = model.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    rng = np.random.default_rng(model.config.seed if seed is None else seed)

    for step in range(1, steps + 1):
        batch = sample_batch(data, rng, batch_size, length)
        model.zero_grad()
        loss = lm_loss(model, batch)
        loss.backward()
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
        total = np.sqrt(sum(float((g * g).sum()) for g in grads))
        scale = min(1.0, clip_norm / (total + 1e-12)) if clip_norm else 1.0
        for p, g, vel in zip(params, grads, velocity):
            vel *= momentum
            vel += scale * g
            p.data -= learning_rate * vel
        if callback is not None:
            callback(step, loss.item())
    model.zero_grad()
    return model


def build_model(
    config: ModelConfig,
    embed: dict[str, np.ndarray],
    layers: Sequence[tuple[int, dict[str, np.ndarray]]],
    head: dict[str, np.ndarray],
) -> TransformerModel:
    """Assemble a model from raw arrays (used by checkpoint loading and tests)."""
    def t(a):
        return Tensor(np.array(a, dtype=np.float64), requires_grad=True)

    return TransformerModel(
        config,
        {k: t(v) for k, v in embed.items()},
        [DecoderLayer({k: t(v) for k, v in params.items()}, idx) for idx, params in layers],
        {k: t(v) for k, v in head.items()},
    )
