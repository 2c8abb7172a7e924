"""Local windowed self-attention and a desk-scale encoder-decoder.

The encoder restricts self-attention to a symmetric band of total width W
around each query position (boundary rows simply see fewer neighbors);
decoder self-attention stays causal and cross-attention stays full.  The
band is realized by masking a dense computation: memory savings at real
scale are modeled by :mod:`longspan.costmodel`, not by this module's
actual footprint.

Positional rows beyond the base table are produced by palindromic tiling
(copy, then flipped copy, alternating), so adjacent blocks meet at equal
rows and the transition is smooth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, DomainError, InputError

FULL = "full"


def _is_full(window) -> bool:
    return isinstance(window, str) and window.lower() == FULL


@dataclass(frozen=True)
class AttentionConfig:
    """Geometry of one self-attention stack: positions, band width, heads."""

    n_positions: int
    window: int | str
    n_heads: int
    d_model: int

    def __post_init__(self):
        if self.n_positions < 1:
            raise DomainError(f"n_positions must be >= 1, got {self.n_positions}")
        if not _is_full(self.window) and int(self.window) < 1:
            raise DomainError(f"window must be >= 1 or '{FULL}', got {self.window}")
        if self.d_model % self.n_heads != 0:
            raise DomainError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class AttentionMap:
    """Row-stochastic attention weights [heads x N x N] for diagnostics.

    Construction validates that every row sums to 1 and, when a window is
    given, that entries outside the band are exactly zero.
    """

    weights: np.ndarray
    window: int | str | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim == 2:
            w = w[None, :, :]
        if w.ndim != 3 or w.shape[-1] != w.shape[-2]:
            raise DimensionError(f"attention map must be [heads x N x N], got {w.shape}")
        if np.abs(w.sum(axis=-1) - 1.0).max() > 1e-9:
            raise ContractError("attention rows must sum to 1 within 1e-9")
        if self.window is not None:
            permitted = build_local_mask(w.shape[-1], self.window)
            if (w[:, ~permitted] != 0.0).any():
                raise ContractError("nonzero attention outside the local window")
        object.__setattr__(self, "weights", w)

    @property
    def n_heads(self) -> int:
        return self.weights.shape[0]

    @property
    def n_positions(self) -> int:
        return self.weights.shape[-1]

    def head(self, index: int) -> np.ndarray:
        return self.weights[index]

    def mean_distances(self) -> list[float]:
        return [mean_attention_distance(self.weights[h]) for h in range(self.n_heads)]


def build_local_mask(n: int, window: int | str) -> np.ndarray:
    """Boolean [n x n] mask permitting |i - j| <= floor(window / 2).

    A window of at least 2n - 1 permits everything; ``FULL`` is accepted
    as an explicit everything-permitted sentinel.
    """
    if n < 1:
        raise DomainError(f"mask size must be >= 1, got {n}")
    if _is_full(window):
        return np.ones((n, n), dtype=bool)
    window = int(window)
    if window < 1:
        raise DomainError(f"window must be >= 1, got {window}")
    half = window // 2
    offsets = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return offsets <= half


def causal_mask(n: int) -> np.ndarray:
    """Boolean [n x n] mask permitting j <= i."""
    return np.tril(np.ones((n, n), dtype=bool))


@dataclass
class AttentionParams:
    """Projection weights of one multi-head attention block."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor

    @classmethod
    def init(cls, d_model: int, rng: np.random.Generator) -> "AttentionParams":
        def w():
            bound = 1.0 / math.sqrt(d_model)
            return ad.parameter(rng.uniform(-bound, bound, size=(d_model, d_model)))

        def b():
            return ad.parameter(np.zeros(d_model))

        return cls(w(), b(), w(), b(), w(), b(), w(), b())

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {
            f"{prefix}.{name}": getattr(self, name)
            for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
        }


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    n, d = x.shape
    return ad.transpose(ad.reshape(x, (n, n_heads, d // n_heads)), (1, 0, 2))


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: np.ndarray,
    params: AttentionParams,
    n_heads: int,
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over permitted positions.

    Returns the projected output [Nq x d_model] and the attention weights
    [heads x Nq x Nk] for diagnostics.  Rows of ``mask`` must each permit
    at least one key.
    """
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError(f"expected 2-D q/k/v, got {q.shape}, {k.shape}, {v.shape}")
    d_model = q.shape[1]
    d_head = d_model // n_heads
    qh = _split_heads(ad.add(ad.matmul(q, params.wq), params.bq), n_heads)
    kh = _split_heads(ad.add(ad.matmul(k, params.wk), params.bk), n_heads)
    vh = _split_heads(ad.add(ad.matmul(v, params.wv), params.bv), n_heads)
    scores = ad.mul(
        ad.matmul(qh, ad.transpose(kh, (0, 2, 1))),
        ad.Tensor(np.float64(1.0 / math.sqrt(d_head))),
    )
    attn = ad.masked_softmax(scores, mask[None, :, :])
    ctx = ad.matmul(attn, vh)  # [H, Nq, d_head]
    merged = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (q.shape[0], d_model))
    out = ad.add(ad.matmul(merged, params.wo), params.bo)
    return out, attn


def extend_positional_embedding(base: Tensor, target_len: int) -> Tensor:
    """Tile a positional table to ``target_len`` rows by alternating copy/flip.

    Position p in block b = p // L at offset r = p % L maps to base row r
    for even b and row L-1-r for odd b, so every block boundary repeats a
    row and the table has period 2L.
    """
    length = base.shape[0]
    if target_len < 1 or target_len % length != 0:
        raise DomainError(
            f"target length {target_len} is not a positive multiple of the base length {length}"
        )
    p = np.arange(target_len)
    block, offset = p // length, p % length
    rows = np.where(block % 2 == 0, offset, length - 1 - offset)
    return ad.getitem(base, rows)


def mean_attention_distance(weights, n: int | None = None) -> float:
    """Attention-weighted average of |i - j| over one head's [N x N] map."""
    w = weights.data if isinstance(weights, Tensor) else np.asarray(weights, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise DimensionError(f"expected a square attention map, got {w.shape}")
    size = w.shape[0]
    if n is not None and n != size:
        raise DimensionError(f"declared N={n} does not match map size {size}")
    row_sums = w.sum(axis=-1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        raise ContractError("attention rows are not row-stochastic (sum deviates > 1e-6)")
    dist = np.abs(np.subtract.outer(np.arange(size), np.arange(size)))
    return float((w * dist).sum() / size)


def uniform_attention_distance(n: int) -> float:
    """Mean distance under uniform attention: (N^2 - 1) / (3N)."""
    return (n * n - 1.0) / (3.0 * n)


@dataclass(frozen=True)
class ToyModelConfig:
    """Dimensions of the desk-scale encoder-decoder.

    Defaults are artifact-sized so every invariant checks in milliseconds.
    ``max_src`` must be a multiple of ``pos_base_len`` (the stored encoder
    positional table is tiled up to it).
    """

    vocab: int = 101
    d_model: int = 16
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int = 32
    pos_base_len: int = 16
    max_src: int = 64
    max_tgt: int = 16
    window: int | str = FULL
    bos_id: int = 1

    def __post_init__(self):
        for name in ("vocab", "d_model", "n_heads", "enc_layers", "dec_layers",
                     "ffn_dim", "pos_base_len", "max_src", "max_tgt"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")
        if self.max_src % self.pos_base_len != 0:
            raise DomainError(
                f"max_src {self.max_src} must be a multiple of pos_base_len {self.pos_base_len}"
            )
        if self.d_model % self.n_heads != 0:
            raise DomainError("d_model must be divisible by n_heads")
        if not _is_full(self.window) and int(self.window) < 1:
            raise DomainError(f"window must be >= 1 or '{FULL}'")

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab, "d_model": self.d_model, "n_heads": self.n_heads,
            "enc_layers": self.enc_layers, "dec_layers": self.dec_layers,
            "ffn_dim": self.ffn_dim, "pos_base_len": self.pos_base_len,
            "max_src": self.max_src, "max_tgt": self.max_tgt,
            "window": self.window, "bos_id": self.bos_id,
        }


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = ad.tmean(x, axis=-1, keepdims=True)
    centered = ad.sub(x, mu)
    var = ad.tmean(ad.mul(centered, centered), axis=-1, keepdims=True)
    inv = ad.power(ad.add(var, ad.Tensor(np.float64(eps))), -0.5)
    return ad.add(ad.mul(ad.mul(centered, inv), gain), bias)


class ToySeq2Seq:
    """Post-norm transformer encoder-decoder with a banded encoder.

    Parameters live in a flat name -> Tensor map so checkpoints are a
    direct dump of :meth:`parameters`.
    """

    def __init__(self, config: ToyModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    # -- construction -----------------------------------------------------

    @classmethod
    def init(cls, config: ToyModelConfig | None = None, seed: int = 0) -> "ToySeq2Seq":
        config = config or ToyModelConfig()
        rng = np.random.default_rng(seed)
        d, f = config.d_model, config.ffn_dim
        params: dict[str, Tensor] = {}

        def w(rows, cols):
            bound = 1.0 / math.sqrt(rows)
            return ad.parameter(rng.uniform(-bound, bound, size=(rows, cols)))

        params["embed"] = ad.parameter(rng.normal(scale=0.25, size=(config.vocab, d)))
        params["pos_enc"] = ad.parameter(rng.normal(scale=0.25, size=(config.pos_base_len, d)))
        params["pos_dec"] = ad.parameter(rng.normal(scale=0.25, size=(config.max_tgt, d)))

        def block(prefix: str, cross: bool):
            params.update(AttentionParams.init(d, rng).named(f"{prefix}.attn"))
            if cross:
                params.update(AttentionParams.init(d, rng).named(f"{prefix}.xattn"))
                params[f"{prefix}.ln_x.g"] = ad.parameter(np.ones(d))
                params[f"{prefix}.ln_x.b"] = ad.parameter(np.zeros(d))
            params[f"{prefix}.ffn.w1"] = w(d, f)
            params[f"{prefix}.ffn.b1"] = ad.parameter(np.zeros(f))
            params[f"{prefix}.ffn.w2"] = w(f, d)
            params[f"{prefix}.ffn.b2"] = ad.parameter(np.zeros(d))
            params[f"{prefix}.ln_a.g"] = ad.parameter(np.ones(d))
            params[f"{prefix}.ln_a.b"] = ad.parameter(np.zeros(d))
            params[f"{prefix}.ln_f.g"] = ad.parameter(np.ones(d))
            params[f"{prefix}.ln_f.b"] = ad.parameter(np.zeros(d))

        for i in range(config.enc_layers):
            block(f"enc.{i}", cross=False)
        for i in range(config.dec_layers):
            block(f"dec.{i}", cross=True)
        params["out.w"] = w(d, config.vocab)
        params["out.b"] = ad.parameter(np.zeros(config.vocab))
        return cls(config, params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def _attn_params(self, prefix: str) -> AttentionParams:
        p = self.params
        return AttentionParams(*(p[f"{prefix}.{n}"] for n in
                                 ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")))

    # -- forward ----------------------------------------------------------

    def _check_tokens(self, tokens, limit: int, what: str) -> np.ndarray:
        ids = np.asarray(tokens, dtype=np.intp)
        if ids.ndim != 1 or ids.size == 0:
            raise InputError(f"{what} must be a non-empty 1-D token sequence")
        if ids.size > limit:
            raise InputError(f"{what} length {ids.size} exceeds limit {limit}")
        if ids.min() < 0 or ids.max() >= self.config.vocab:
            raise InputError(f"{what} contains a token id outside the vocabulary")
        return ids

    def _encoder_positions(self, n: int) -> Tensor:
        cfg = self.config
        table = self.params["pos_enc"]
        if cfg.max_src > cfg.pos_base_len:
            table = extend_positional_embedding(table, cfg.max_src)
        return ad.getitem(table, np.arange(n))

    def _block_forward(self, prefix: str, x: Tensor, mask: np.ndarray,
                       cross_states: Tensor | None = None,
                       cross_mask: np.ndarray | None = None):
        p = self.params
        attn_out, attn = multi_head_attention(
            x, x, x, mask, self._attn_params(f"{prefix}.attn"), self.config.n_heads
        )
        x = layer_norm(ad.add(x, attn_out), p[f"{prefix}.ln_a.g"], p[f"{prefix}.ln_a.b"])
        if cross_states is not None:
            xatt_out, _ = multi_head_attention(
                x, cross_states, cross_states, cross_mask,
                self._attn_params(f"{prefix}.xattn"), self.config.n_heads,
            )
            x = layer_norm(ad.add(x, xatt_out), p[f"{prefix}.ln_x.g"], p[f"{prefix}.ln_x.b"])
        h = ad.gelu(ad.add(ad.matmul(x, p[f"{prefix}.ffn.w1"]), p[f"{prefix}.ffn.b1"]))
        ffn = ad.add(ad.matmul(h, p[f"{prefix}.ffn.w2"]), p[f"{prefix}.ffn.b2"])
        x = layer_norm(ad.add(x, ffn), p[f"{prefix}.ln_f.g"], p[f"{prefix}.ln_f.b"])
        return x, attn

    def encoder_forward(self, tokens) -> tuple[Tensor, list[Tensor]]:
        """Embed, add positions, run banded self-attention layers.

        Returns final states [N x d_model] and per-layer attention maps.
        """
        cfg = self.config
        ids = self._check_tokens(tokens, cfg.max_src, "source")
        n = ids.size
        x = ad.add(ad.getitem(self.params["embed"], ids), self._encoder_positions(n))
        mask = build_local_mask(n, cfg.window)
        attns: list[Tensor] = []
        for i in range(cfg.enc_layers):
            x, attn = self._block_forward(f"enc.{i}", x, mask)
            attns.append(attn)
        return x, attns

    def seq2seq_forward(self, source, target) -> Tensor:
        """Teacher-forced per-step vocabulary logits [M x vocab].

        Step m conditions on the source and on target tokens before m
        (causal decoder self-attention, full cross-attention).
        """
        cfg = self.config
        enc_states, _ = self.encoder_forward(source)
        tgt = self._check_tokens(target, cfg.max_tgt, "target")
        m = tgt.size
        dec_in = np.concatenate(([cfg.bos_id], tgt[:-1]))
        x = ad.add(
            ad.getitem(self.params["embed"], dec_in),
            ad.getitem(self.params["pos_dec"], np.arange(m)),
        )
        self_mask = causal_mask(m)
        cross = np.ones((m, enc_states.shape[0]), dtype=bool)
        for i in range(cfg.dec_layers):
            x, _ = self._block_forward(f"dec.{i}", x, self_mask, enc_states, cross)
        return ad.add(ad.matmul(x, self.params["out.w"]), self.params["out.b"])

    def loss(self, source, target) -> Tensor:
        """Summed cross-entropy of the target under teacher forcing."""
        logits = self.seq2seq_forward(source, target)
        return ad.cross_entropy_logits(logits, np.asarray(target, dtype=np.intp))

    # -- serialization ------------------------------------------------------

    CHECKPOINT_KIND = "toy_seq2seq"

    def save(self, path) -> None:
        from .checkpoint import save_tensors

        save_tensors(path, self.params,
                     {"kind": self.CHECKPOINT_KIND, "config": self.config.to_dict()})


def load_toy_model(path) -> ToySeq2Seq:
    from .checkpoint import load_tensors
    from .errors import FormatError

    tensors, meta = load_tensors(path)
    if meta.get("kind") != ToySeq2Seq.CHECKPOINT_KIND:
        raise FormatError(
            f"checkpoint kind {meta.get('kind')!r} is not {ToySeq2Seq.CHECKPOINT_KIND!r}"
        )
    config = ToyModelConfig(**meta["config"])
    template = ToySeq2Seq.init(config, seed=0)
    if set(template.params) != set(tensors):
        raise FormatError("checkpoint tensors do not match the model layout")
    params = {}
    for name, arr in tensors.items():
        if template.params[name].shape != arr.shape:
            raise FormatError(
                f"checkpoint tensor {name} has shape {arr.shape}, "
                f"expected {template.params[name].shape}"
            )
        params[name] = ad.parameter(arr)
    return ToySeq2Seq(config, params)
