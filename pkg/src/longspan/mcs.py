"""Multitask content selection: hierarchical BiGRU seq2seq with an extractive head.

The encoder runs a bidirectional word-level GRU inside each sentence, then
a bidirectional sentence-level GRU over per-sentence summaries (forward
state at the last word concatenated with backward state at the first).  A
one-layer GRU decoder attends hierarchically: sentence-level attention
weights reweight per-sentence word attention, and the sentence weights
are the quantity of interest at inference time.

Two training objectives share the encoder: teacher-forced generation
(summed NLL) and per-sentence binary labelling through a sigmoid
classifier on sentence states.  The mixed loss is their convex
combination under a weight in [0, 1].

At inference, each sentence gets two raw channels: the classifier
probability and its accumulated sentence-attention mass over every
decoded step of the top beam. Each channel is rank-normalized to [0, 1]
((R - rank) / (R - 1), best rank 1; a single sentence scores 1.0) and the
fused score is their sum, so any strictly increasing transform of a raw
channel leaves the final ranking unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GruParams, Tensor
from .checkpoint import load_tensors, save_tensors
from .corpus import Document, Example, Vocab
from .errors import (
    DomainError,
    FormatError,
    InputError,
    TrainingDivergedError,
)
from .metrics import ngram_recall
from .selection import Ranking, select

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "mcs"


@dataclass(frozen=True)
class McsConfig:
    """Dimensions and limits of the hierarchical model.

    ``hidden_dim`` is the concatenated bidirectional state size (each
    direction carries half).  Defaults are desk-scale; ``full_scale``
    gives the published configuration.
    """

    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    word_layers: int = 2
    sent_layers: int = 2
    decoder_layers: int = 1
    dropout: float = 0.1
    gamma: float = 0.2
    max_sentences: int = 16
    max_words: int = 12
    max_target: int = 16

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "word_layers",
                     "sent_layers", "max_sentences", "max_words", "max_target"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")
        if self.decoder_layers != 1:
            raise DomainError("the decoder is a single-layer recurrence")
        if self.hidden_dim % 2 != 0:
            raise DomainError("hidden_dim must be even (split across directions)")
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError(f"dropout must be in [0, 1), got {self.dropout}")

    @classmethod
    def full_scale(cls, vocab_size: int) -> "McsConfig":
        return cls(vocab_size=vocab_size, embed_dim=256, hidden_dim=512,
                   max_sentences=1000, max_words=50, max_target=144)

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim, "word_layers": self.word_layers,
            "sent_layers": self.sent_layers, "decoder_layers": self.decoder_layers,
            "dropout": self.dropout, "gamma": self.gamma,
            "max_sentences": self.max_sentences, "max_words": self.max_words,
            "max_target": self.max_target,
        }


@dataclass
class Encoded:
    """Encoder outputs for one document."""

    word_states: Tensor        # [N1, J, hidden]
    word_mask: np.ndarray      # [N1, J] bool
    sent_states: Tensor        # [N1, hidden]
    summary: Tensor            # [hidden]
    n_sentences: int


@dataclass
class McsScores:
    """Per-sentence raw channels and their rank-fused combination."""

    z_hat: np.ndarray
    attn_mass: np.ndarray
    fused: np.ndarray

    def to_records(self, doc_id: str | None) -> list[dict]:
        return [
            {"id": doc_id, "sentence_index": i,
             "z_hat": float(self.z_hat[i]),
             "attn_mass": float(self.attn_mass[i]),
             "fused": float(self.fused[i])}
            for i in range(len(self.fused))
        ]


@dataclass
class BeamResult:
    tokens: list[int]            # generated ids, end token stripped
    ended: bool                  # end token was produced
    logprob: float
    score: float                 # length-penalized
    sent_attn: np.ndarray        # [decoded steps x N1], includes the end step


def rank_normalize(scores: np.ndarray) -> np.ndarray:
    """Map raw scores to (R - rank) / (R - 1); ties favor the smaller index."""
    r = len(scores)
    if r == 1:
        return np.ones(1)
    order = sorted(range(r), key=lambda i: (-scores[i], i))
    nscore = np.empty(r)
    for position, idx in enumerate(order):
        nscore[idx] = (r - (position + 1)) / (r - 1)
    return nscore


def make_labels(doc: Document, reference: Sequence[str]) -> np.ndarray:
    """1.0 where the sentence has positive bigram recall against the reference."""
    if not reference:
        raise InputError("labels require a non-empty reference")
    return np.array(
        [1.0 if ngram_recall(s, reference, 2) > 0.0 else 0.0 for s in doc.sentences]
    )


class McsModel:
    """Hierarchical encoder-decoder with a sentence classifier head."""

    def __init__(self, config: McsConfig, vocab: Vocab, params: dict[str, Tensor]):
        if len(vocab) != config.vocab_size:
            raise DomainError(
                f"vocab size {len(vocab)} does not match config {config.vocab_size}"
            )
        self.config = config
        self.vocab = vocab
        self.params = params

    # -- construction / serialization --------------------------------------

    @classmethod
    def init(cls, config: McsConfig, vocab: Vocab, seed: int = 0) -> "McsModel":
        rng = np.random.default_rng(seed)
        e, h = config.embed_dim, config.hidden_dim
        half = h // 2
        params: dict[str, Tensor] = {}
        params["embed"] = ad.parameter(rng.normal(scale=0.25, size=(config.vocab_size, e)))

        def add_gru(prefix: str, d_in: int, d_h: int):
            gru = GruParams.init(d_in, d_h, rng)
            for name, tensor in zip(GruParams.FIELDS, gru.tensors()):
                params[f"{prefix}.{name}"] = tensor

        for layer in range(config.word_layers):
            d_in = e if layer == 0 else h
            add_gru(f"word.{layer}.f", d_in, half)
            add_gru(f"word.{layer}.b", d_in, half)
        for layer in range(config.sent_layers):
            add_gru(f"sent.{layer}.f", h, half)
            add_gru(f"sent.{layer}.b", h, half)
        add_gru("dec.gru", e, h)

        def w(rows, cols):
            bound = 1.0 / math.sqrt(cols)
            return ad.parameter(rng.uniform(-bound, bound, size=(rows, cols)))

        params["dec.init.w"] = w(h, h)
        params["dec.init.b"] = ad.parameter(np.zeros(h))
        params["dec.att_sent.w"] = w(h, h)
        params["dec.att_word.w"] = w(h, h)
        params["dec.comb.w"] = w(h, 2 * h)
        params["dec.comb.b"] = ad.parameter(np.zeros(h))
        params["dec.out.w"] = w(config.vocab_size, h)
        params["dec.out.b"] = ad.parameter(np.zeros(config.vocab_size))
        params["cls.w"] = ad.parameter(rng.uniform(-0.1, 0.1, size=h))
        params["cls.b"] = ad.parameter(np.zeros(()))
        return cls(config, vocab, params)

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def _gru(self, prefix: str) -> GruParams:
        return GruParams(*(self.params[f"{prefix}.{n}"] for n in GruParams.FIELDS))

    def save(self, path) -> None:
        meta = {
            "kind": CHECKPOINT_KIND,
            "config": self.config.to_dict(),
            "vocab": self.vocab.to_list(),
        }
        save_tensors(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "McsModel":
        tensors, meta = load_tensors(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise FormatError(
                f"checkpoint kind {meta.get('kind')!r} is not {CHECKPOINT_KIND!r}"
            )
        config = McsConfig(**meta["config"])
        vocab = Vocab.from_list(meta["vocab"])
        template = cls.init(config, vocab, seed=0)
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
        return cls(config, vocab, params)

    # -- encoding -----------------------------------------------------------

    def _doc_ids(self, doc: Document) -> list[list[int]]:
        cfg = self.config
        sentences = doc.sentences
        if len(sentences) > cfg.max_sentences:
            log.warning("document %s clipped to %d sentences", doc.id, cfg.max_sentences)
            sentences = sentences[: cfg.max_sentences]
        ids = []
        for sentence in sentences:
            if len(sentence) > cfg.max_words:
                log.warning("sentence clipped to %d words in document %s",
                            cfg.max_words, doc.id)
                sentence = sentence[: cfg.max_words]
            ids.append(self.vocab.encode(sentence))
        return ids

    def _bigru_sequence(self, x: Tensor, mask: np.ndarray, prefix: str) -> tuple[Tensor, Tensor, Tensor]:
        """Bidirectional GRU over axis 1 of ``x`` [rows, steps, d_in].

        Masked steps carry the previous state through, so the forward
        final state sits at each row's last valid step and the backward
        final state at its first.  Returns (states [rows, steps, 2*half],
        final_forward, final_backward).
        """
        rows, steps, _ = x.shape
        half = self.config.hidden_dim // 2
        fwd = self._gru(f"{prefix}.f")
        bwd = self._gru(f"{prefix}.b")

        def run(params: GruParams, order):
            h = Tensor(np.zeros((rows, half)))
            per_step: dict[int, Tensor] = {}
            for j in order:
                xj = ad.getitem(x, (slice(None), j))
                h_new = ad.gru_cell(xj, h, params)
                h = ad.where(mask[:, j : j + 1], h_new, h)
                per_step[j] = h
            return ad.stack([per_step[j] for j in range(steps)], axis=1), h

        states_f, final_f = run(fwd, range(steps))
        states_b, final_b = run(bwd, range(steps - 1, -1, -1))
        return ad.concat([states_f, states_b], axis=2), final_f, final_b

    def encode(self, doc: Document, training: bool = False,
               rng: np.random.Generator | None = None) -> Encoded:
        """Word-level then sentence-level bidirectional encoding.

        Documents beyond the configured sentence/word limits are clipped
        with a warning.
        """
        cfg = self.config
        ids = self._doc_ids(doc)
        n1 = len(ids)
        lengths = [len(s) for s in ids]
        j_max = max(lengths)
        id_matrix = np.full((n1, j_max), Vocab.PAD, dtype=np.intp)
        mask = np.zeros((n1, j_max), dtype=bool)
        for i, sent in enumerate(ids):
            id_matrix[i, : len(sent)] = sent
            mask[i, : len(sent)] = True

        drop = cfg.dropout if training else 0.0
        if drop > 0.0 and rng is None:
            raise DomainError("training-mode encode with dropout requires an rng")
        x = ad.getitem(self.params["embed"], id_matrix)  # [N1, J, e]
        final_f = final_b = None
        for layer in range(cfg.word_layers):
            if layer > 0 and drop > 0.0:
                x = ad.dropout(x, drop, rng)
            x, final_f, final_b = self._bigru_sequence(x, mask, f"word.{layer}")
        word_states = x
        reps = ad.concat([final_f, final_b], axis=1)  # [N1, hidden]

        # sentence-level GRU treats the N1 sentences as one sequence (batch of 1)
        seq = ad.reshape(reps, (1, n1, cfg.hidden_dim))
        seq_mask = np.ones((1, n1), dtype=bool)
        final_sf = final_sb = None
        for layer in range(cfg.sent_layers):
            if layer > 0 and drop > 0.0:
                seq = ad.dropout(seq, drop, rng)
            seq, final_sf, final_sb = self._bigru_sequence(seq, seq_mask, f"sent.{layer}")
        sent_states = ad.reshape(seq, (n1, cfg.hidden_dim))
        summary = ad.reshape(ad.concat([final_sf, final_sb], axis=1), (cfg.hidden_dim,))
        return Encoded(word_states, mask, sent_states, summary, n1)

    # -- heads ---------------------------------------------------------------

    def classifier_scores(self, sent_states: Tensor) -> Tensor:
        """Per-sentence probability of carrying reference content."""
        raw = ad.add(ad.matmul(sent_states, self.params["cls.w"]), self.params["cls.b"])
        return ad.sigmoid(raw)

    def _decoder_start(self, enc: Encoded) -> Tensor:
        return ad.tanh(ad.add(ad.matmul(self.params["dec.init.w"], enc.summary),
                              self.params["dec.init.b"]))

    def _decode_step(self, prev_id: int, state: Tensor, enc: Encoded) -> tuple[Tensor, Tensor, Tensor]:
        """One decoder step: returns (new state, vocabulary logits, sentence attention)."""
        p = self.params
        emb = ad.getitem(p["embed"], int(prev_id))
        state = ad.gru_cell(emb, state, self._gru("dec.gru"))
        sent_query = ad.matmul(p["dec.att_sent.w"], state)        # [h]
        sent_scores = ad.matmul(enc.sent_states, sent_query)      # [N1]
        alpha = ad.masked_softmax(sent_scores, np.ones(enc.n_sentences, dtype=bool))
        word_query = ad.matmul(p["dec.att_word.w"], state)        # [h]
        word_scores = ad.matmul(enc.word_states, word_query)      # [N1, J]
        beta = ad.masked_softmax(word_scores, enc.word_mask)      # per-sentence rows
        weights = ad.mul(ad.reshape(alpha, (enc.n_sentences, 1)), beta)
        context = ad.tsum(
            ad.mul(ad.reshape(weights, (*weights.shape, 1)), enc.word_states),
            axis=(0, 1),
        )
        feat = ad.tanh(ad.add(ad.matmul(p["dec.comb.w"], ad.concat([state, context])),
                              p["dec.comb.b"]))
        logits = ad.add(ad.matmul(p["dec.out.w"], feat), p["dec.out.b"])
        return state, logits, alpha

    def _teacher_forced(self, enc: Encoded, target_ids: Sequence[int]) -> tuple[Tensor, Tensor]:
        state = self._decoder_start(enc)
        prev = Vocab.BOS
        logit_rows, attn_rows = [], []
        for target in target_ids:
            state, logits, alpha = self._decode_step(prev, state, enc)
            logit_rows.append(logits)
            attn_rows.append(alpha)
            prev = int(target)
        return ad.stack(logit_rows), ad.stack(attn_rows)

    # -- losses ---------------------------------------------------------------

    def _target_ids(self, target: Sequence) -> list[int]:
        cfg = self.config
        if len(target) == 0:
            raise InputError("target sequence is empty")
        if len(target) > cfg.max_target:
            raise InputError(f"target length {len(target)} exceeds limit {cfg.max_target}")
        if all(isinstance(t, str) for t in target):
            return self.vocab.encode(target)
        ids = [int(t) for t in target]
        if min(ids) < 0 or max(ids) >= cfg.vocab_size:
            raise InputError("target token id outside the vocabulary")
        return ids

    def _seq2seq_loss_from(self, enc: Encoded, target_ids: list[int]) -> Tensor:
        logits, _ = self._teacher_forced(enc, target_ids)
        return ad.cross_entropy_logits(logits, np.asarray(target_ids))

    def _label_loss_from(self, enc: Encoded, labels: np.ndarray) -> Tensor:
        labels = np.asarray(labels, dtype=np.float64)
        if labels.shape != (enc.n_sentences,):
            raise InputError(
                f"labels shape {labels.shape} does not match {enc.n_sentences} sentences"
            )
        z_hat = self.classifier_scores(enc.sent_states)
        if ((z_hat.data <= 0.0) | (z_hat.data >= 1.0)).any():
            log.warning("classifier output saturated; clamping inside the loss")
        z = ad.clip(z_hat, 1e-12, 1.0 - 1e-12)
        pos = ad.mul(Tensor(labels), ad.log(z))
        negated = ad.mul(Tensor(1.0 - labels), ad.log(ad.sub(Tensor(np.ones_like(labels)), z)))
        return ad.neg(ad.tsum(ad.add(pos, negated)))

    def seq2seq_loss(self, doc: Document, target: Sequence,
                     training: bool = False, rng=None) -> Tensor:
        """Summed teacher-forced NLL of the target."""
        enc = self.encode(doc, training=training, rng=rng)
        return self._seq2seq_loss_from(enc, self._target_ids(target))

    def label_loss(self, doc: Document, labels: np.ndarray,
                   training: bool = False, rng=None) -> Tensor:
        """Binary cross-entropy of the classifier over sentences."""
        enc = self.encode(doc, training=training, rng=rng)
        return self._label_loss_from(enc, labels)

    def mcs_loss(self, doc: Document, target: Sequence, labels: np.ndarray,
                 gamma: float | None = None, training: bool = False, rng=None) -> Tensor:
        """Convex mix: gamma * labelling + (1 - gamma) * generation."""
        gamma = self.config.gamma if gamma is None else float(gamma)
        if not 0.0 <= gamma <= 1.0:
            raise DomainError(f"gamma must be in [0, 1], got {gamma}")
        enc = self.encode(doc, training=training, rng=rng)
        if gamma == 1.0:
            return self._label_loss_from(enc, labels)
        if gamma == 0.0:
            return self._seq2seq_loss_from(enc, self._target_ids(target))
        l_label = self._label_loss_from(enc, labels)
        l_seq = self._seq2seq_loss_from(enc, self._target_ids(target))
        return ad.add(ad.mul(Tensor(np.float64(gamma)), l_label),
                      ad.mul(Tensor(np.float64(1.0 - gamma)), l_seq))

    # -- inference -----------------------------------------------------------

    def beam_search(self, doc: Document, width: int = 4, length_penalty: float = 2.0,
                    min_len: int = 1, max_len: int | None = None,
                    no_repeat_ngram: int = 3) -> BeamResult:
        """Length-penalized beam decode returning the top hypothesis.

        The end token is suppressed while fewer than ``min_len`` tokens
        (counting the end step) have been generated; next tokens that
        would repeat an ``no_repeat_ngram``-gram already present in the
        hypothesis are banned.  Sentence-attention rows are collected for
        every decoded step of the winner, including its end step.
        """
        if width < 1:
            raise DomainError(f"beam width must be >= 1, got {width}")
        max_len = self.config.max_target if max_len is None else int(max_len)
        with ad.no_grad():
            enc = self.encode(doc)
            return self._beam_from_encoded(enc, width, length_penalty,
                                           min_len, max_len, no_repeat_ngram)

    @staticmethod
    def _banned_next(tokens: list[int], n: int) -> set[int]:
        if n < 1 or len(tokens) + 1 < n:
            return set()
        prefix = tuple(tokens[len(tokens) - (n - 1):]) if n > 1 else ()
        banned = set()
        for i in range(len(tokens) - n + 1):
            gram = tuple(tokens[i : i + n])
            if gram[:-1] == prefix:
                banned.add(gram[-1])
        return banned

    def _beam_from_encoded(self, enc: Encoded, width: int, length_penalty: float,
                           min_len: int, max_len: int, no_repeat_ngram: int) -> BeamResult:
        start = self._decoder_start(enc)
        live = [
            {"tokens": [], "logprob": 0.0, "state": start, "attn": []}
        ]
        finished: list[dict] = []

        def final_score(logprob: float, n_tokens: int) -> float:
            return logprob / (max(n_tokens, 1) ** length_penalty)

        for _ in range(max_len):
            candidates = []
            for beam in live:
                prev = beam["tokens"][-1] if beam["tokens"] else Vocab.BOS
                state, logits, alpha = self._decode_step(prev, beam["state"], enc)
                logp = logits.data - logits.data.max()
                logp = logp - np.log(np.exp(logp).sum())
                if len(beam["tokens"]) + 1 < min_len:
                    logp[Vocab.EOS] = -np.inf
                for banned in self._banned_next(beam["tokens"], no_repeat_ngram):
                    logp[banned] = -np.inf
                order = np.argsort(-logp, kind="stable")[: width + 1]
                for token in order:
                    token = int(token)
                    if not np.isfinite(logp[token]):
                        continue
                    candidates.append({
                        "tokens": beam["tokens"] + [token],
                        "logprob": beam["logprob"] + float(logp[token]),
                        "state": state,
                        "attn": beam["attn"] + [alpha.data.copy()],
                    })
            candidates.sort(key=lambda c: -c["logprob"])
            live = []
            for cand in candidates:
                if cand["tokens"][-1] == Vocab.EOS:
                    if len(finished) < width:
                        finished.append(cand)
                elif len(live) < width:
                    live.append(cand)
                if len(live) >= width and len(finished) >= width:
                    break
            if not live:
                break

        pool = finished + live
        if not pool:
            raise DomainError("beam search produced no hypotheses")
        best = max(
            enumerate(pool),
            key=lambda item: (final_score(item[1]["logprob"], len(item[1]["tokens"])),
                              -item[0]),
        )[1]
        ended = bool(best["tokens"]) and best["tokens"][-1] == Vocab.EOS
        tokens = best["tokens"][:-1] if ended else list(best["tokens"])
        return BeamResult(
            tokens=tokens,
            ended=ended,
            logprob=best["logprob"],
            score=final_score(best["logprob"], len(best["tokens"])),
            sent_attn=np.vstack(best["attn"]) if best["attn"] else np.zeros((0, enc.n_sentences)),
        )

    def inference_scores(self, doc: Document, width: int = 4,
                         length_penalty: float = 2.0, min_len: int = 1,
                         no_repeat_ngram: int = 3) -> tuple[McsScores, Ranking]:
        """Rank-fused classifier and attention channels plus the resulting ranking."""
        with ad.no_grad():
            enc = self.encode(doc)
            z_hat = self.classifier_scores(enc.sent_states).data.copy()
            beam = self._beam_from_encoded(
                enc, width, length_penalty, min_len, self.config.max_target,
                no_repeat_ngram,
            )
        attn_mass = beam.sent_attn.sum(axis=0)
        fused = rank_normalize(z_hat) + rank_normalize(attn_mass)
        order = sorted(range(enc.n_sentences), key=lambda i: (-fused[i], i))
        ranking = Ranking(order, [float(fused[i]) for i in order], "model")
        return McsScores(z_hat, attn_mass, fused), ranking

    def fused_scores(self, doc: Document) -> list[float]:
        """Scorer-callable form of the fused channel for ranking pipelines."""
        scores, _ = self.inference_scores(doc)
        return [float(v) for v in scores.fused]


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def recall_rate(selections, docs, references) -> float:
    """Mean percentage of positive-overlap sentences retained by the selections.

    Documents with no positive-overlap sentence are excluded from the mean.
    """
    rates = []
    for selection, doc, reference in zip(selections, docs, references):
        positive = {i for i, s in enumerate(doc.sentences)
                    if ngram_recall(s, reference, 2) > 0.0}
        if not positive:
            continue
        kept = positive.intersection(selection.indices)
        rates.append(len(kept) / len(positive))
    if not rates:
        raise InputError("no document has a positive-overlap sentence")
    return 100.0 * float(np.mean(rates))


def random_selection_recall(examples: Sequence[Example], budget: int,
                            trials: int, seed: int) -> float:
    """Monte-Carlo recall of uniformly random rankings at the same budget."""
    rng = np.random.default_rng(seed)
    rates = []
    for _ in range(trials):
        selections, docs, refs = [], [], []
        for ex in examples:
            noise = rng.random(ex.doc.n_sentences)
            scores = noise.tolist()
            selections.append(
                select(ex.doc, "model", budget, scorer=lambda d, s=scores: s)
            )
            docs.append(ex.doc)
            refs.append(ex.reference)
        rates.append(recall_rate(selections, docs, refs))
    return float(np.mean(rates))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def lr_schedule(step: int, warmup: int, scale: float = 0.002) -> float:
    """Inverse-sqrt decay with linear warmup.

    The warmup arm is evaluated as (step / warmup) * warmup**-0.5 so the
    two branches agree bit-exactly at step == warmup for every warmup.
    """
    if step < 1:
        raise DomainError(f"schedule step must be >= 1, got {step}")
    if warmup < 1:
        raise DomainError(f"warmup must be >= 1, got {warmup}")
    return scale * min(step**-0.5, (step / warmup) * warmup**-0.5)


@dataclass
class TrainSettings:
    steps: int = 500
    batch_size: int = 2
    warmup: int = 100
    lr_scale: float = 0.002
    seed: int = 0
    val_fraction: float = 0.2
    val_every: int = 50
    patience: int = 3
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class TrainResult:
    model: McsModel
    history: list[dict]
    steps_run: int
    stopped_early: bool


def _prepare(model: McsModel, examples: Sequence[Example]) -> list[tuple[Document, list[int], np.ndarray]]:
    prepared = []
    for ex in examples:
        if ex.reference is None or not ex.reference:
            raise InputError(f"document {ex.doc.id} has no reference; cannot train")
        target = ex.reference[: model.config.max_target]
        prepared.append((ex.doc, model._target_ids(target), make_labels(ex.doc, ex.reference)))
    return prepared


def train(model: McsModel, examples: Sequence[Example], gamma: float | None = None,
          settings: TrainSettings | None = None) -> TrainResult:
    """Mini-batch descent on the mixed loss under the inverse-sqrt schedule.

    Deterministic under ``settings.seed``; aborts with a diagnostic if the
    loss goes non-finite; stops early when validation loss has not
    improved for ``patience`` consecutive evaluations.
    """
    settings = settings or TrainSettings()
    gamma = model.config.gamma if gamma is None else float(gamma)
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must be in [0, 1], got {gamma}")
    prepared = _prepare(model, examples)
    rng = np.random.default_rng(settings.seed)
    order = rng.permutation(len(prepared))
    n_val = int(round(settings.val_fraction * len(prepared)))
    val_set = [prepared[i] for i in order[:n_val]]
    train_set = [prepared[i] for i in order[n_val:]]
    if not train_set:
        raise InputError("training split is empty")

    optimizer = ad.Adam(model.parameters(), beta1=settings.beta1, beta2=settings.beta2)
    history: list[dict] = []
    best_val = math.inf
    stale = 0
    stopped_early = False
    step = 0
    queue: list[int] = []

    def val_loss() -> float:
        total = 0.0
        for doc, target_ids, labels in val_set:
            loss = model.mcs_loss(doc, target_ids, labels, gamma=gamma)
            total += loss.item()
        return total / len(val_set)

    while step < settings.steps:
        while len(queue) < settings.batch_size:
            queue.extend(rng.permutation(len(train_set)).tolist())
        batch = [train_set[queue.pop(0)] for _ in range(settings.batch_size)]
        step += 1
        batch_loss = 0.0
        inv = 1.0 / len(batch)
        for doc, target_ids, labels in batch:
            with ad.Tape() as tape:
                loss = model.mcs_loss(doc, target_ids, labels, gamma=gamma,
                                      training=True, rng=rng)
                tape.backward(ad.mul(loss, Tensor(np.float64(inv))))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"loss became {value} at step {step} "
                    f"(lr={lr_schedule(step, settings.warmup, settings.lr_scale):.3e})"
                )
            batch_loss += value * inv
        optimizer.step(lr_schedule(step, settings.warmup, settings.lr_scale))
        optimizer.zero_grads()
        entry = {"step": step, "train_loss": batch_loss}
        if val_set and step % settings.val_every == 0:
            current = val_loss()
            entry["val_loss"] = current
            if current < best_val - 1e-9:
                best_val = current
                stale = 0
            else:
                stale += 1
                if stale >= settings.patience:
                    history.append(entry)
                    stopped_early = True
                    break
        history.append(entry)

    return TrainResult(model, history, step, stopped_early)
