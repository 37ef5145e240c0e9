"""Fusion-in-decoder generative reader with decoder attention bias and
adversarial embedding training.

The encoder sees each ``[CLS] question [SEP] passage [SEP]`` pair on its own;
the decoder cross-attends over the concatenation of all pair encodings.
Each decoder layer owns a trainable ``(max_passages, num_heads)`` bias whose
row ``k`` is added to the attention scores of every token of the rank-``k``
pair. The token embedding matrix is shared by encoder input, decoder input
and the output projection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .records import InputError, ReaderPrediction
from .rng import make_rng
from .tensor import Tensor
from .text import SPECIAL_TOKENS, EOS, Vocab, tokenize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Seq2SeqConfig:
    vocabulary_size: int
    encoder_layers: int = 2
    decoder_layers: int = 2
    hidden_dim: int = 32
    num_heads: int = 2
    max_passages: int = 100
    max_decode_length: int = 8
    max_sequence_length: int = 64
    ff_dim: int = 64
    attention_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("vocabulary_size", "encoder_layers", "decoder_layers", "hidden_dim", "num_heads",
                     "max_passages", "max_decode_length", "max_sequence_length", "ff_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")


@dataclass(frozen=True)
class AdvConfig:
    epsilon: float = 1e-3
    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if self.epsilon < 0 or self.alpha < 0 or self.beta < 0:
            raise ValueError("epsilon, alpha and beta must be non-negative")


@dataclass
class FusionEncoding:
    memory: Tensor  # (S, d): valid tokens of every pair, pair after pair
    pair_ids: np.ndarray  # (S,) rank index of the pair each token came from
    boundaries: list[tuple[int, int]]  # [start, end) of each pair inside memory

    @property
    def length(self) -> int:
        return self.memory.shape[0]

    def pair(self, k: int) -> Tensor:
        s, e = self.boundaries[k]
        return self.memory[s:e]


@dataclass
class GenerativeInstance:
    question_id: str
    ids: np.ndarray  # (K, L)
    valid: np.ndarray  # (K, L)
    target: list[int] | None  # answer ids ending with EOS


def adversarial_perturb(V: np.ndarray, grad_V: np.ndarray, epsilon: float) -> np.ndarray:
    """V_hat = V - epsilon * grad / ||grad||_F.

    ``grad_V`` is the gradient of the log-likelihood, so the step lowers it.
    Returns ``V`` unchanged when the gradient norm is below 1e-12.
    """
    if V.shape != grad_V.shape:
        raise ValueError(f"embedding {V.shape} and gradient {grad_V.shape} shapes differ")
    norm = float(np.sqrt(np.sum(grad_V * grad_V)))
    if norm < 1e-12:
        log.info("embedding gradient norm %.3g below 1e-12; skipping perturbation", norm)
        return V.copy()
    return V - (epsilon / norm) * grad_V


def biased_cross_attention(y: Tensor, encoding: FusionEncoding, params: dict, name: str,
                           num_heads: int, bias: Tensor | None = None, return_weights: bool = False):
    """Multi-head attention from decoder states ``y`` (Ty, d) onto the fused memory.

    With ``bias`` of shape (K_max, H), head ``h`` scores towards a token of pair
    ``k`` receive ``bias[k, h]`` before the softmax over the whole memory.
    """
    additive = None
    if bias is not None:
        if encoding.pair_ids.size and int(encoding.pair_ids.max()) >= bias.shape[0]:
            raise ValueError(f"pair index {int(encoding.pair_ids.max())} has no bias row "
                             f"(max_passages={bias.shape[0]})")
        per_token = T.gather(bias, encoding.pair_ids, axis=0)  # (S, H)
        additive = per_token.transpose(1, 0).reshape(bias.shape[1], 1, encoding.length)
    return nn.multi_head_attention(y, encoding.memory, params, name, num_heads,
                                   additive=(additive,), return_weights=return_weights)


class GenerativeReader:
    model_type = "generative"

    def __init__(self, config: Seq2SeqConfig, vocab: Vocab, params: dict | None = None):
        if config.vocabulary_size != len(vocab):
            raise ValueError("config.vocabulary_size does not match the vocabulary")
        self.config = config
        self.vocab = vocab
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> dict:
        cfg = self.config
        rng = make_rng(cfg.seed, "generative", "init")
        d = cfg.hidden_dim
        p = {
            "emb.tok": T.parameter(rng.normal(0.0, 1.0, size=(cfg.vocabulary_size, d)), "emb.tok"),
            "enc.pos": T.parameter(rng.normal(0.0, 0.1, size=(cfg.max_sequence_length, d)), "enc.pos"),
            "dec.pos": T.parameter(rng.normal(0.0, 0.1, size=(cfg.max_decode_length + 1, d)), "dec.pos"),
        }
        for layer in range(cfg.encoder_layers):
            nn.init_block(p, rng, f"enc.{layer}", d, cfg.ff_dim)
        nn.init_layer_norm(p, "enc.ln_f", d)
        for layer in range(cfg.decoder_layers):
            nn.init_block(p, rng, f"dec.{layer}", d, cfg.ff_dim, cross=True)
            if cfg.attention_bias:
                name = f"dec.{layer}.xbias"
                p[name] = T.parameter(np.zeros((cfg.max_passages, cfg.num_heads)), name)
        nn.init_layer_norm(p, "dec.ln_f", d)
        return p

    # -- inputs ----------------------------------------------------------------------
    def prepare(self, question_id: str, question: str, passages: list[str],
                answer: str | None = None) -> GenerativeInstance:
        cfg = self.config
        if not 1 <= len(passages) <= cfg.max_passages:
            raise ValueError(f"need 1..{cfg.max_passages} passages, got {len(passages)}")
        q = self.vocab.encode(tokenize(question))
        limit = cfg.max_sequence_length
        if len(q) + 3 > limit:
            raise InputError(f"question of {len(q)} tokens exceeds max_sequence_length {limit}")
        rows = []
        for text in passages:
            p_ids = self.vocab.encode(tokenize(text))[: limit - len(q) - 3]
            rows.append([self.vocab.cls_id, *q, self.vocab.sep_id, *p_ids, self.vocab.sep_id])
        width = max(len(r) for r in rows)
        ids = np.zeros((len(rows), width), dtype=np.intp)
        valid = np.zeros((len(rows), width), dtype=bool)
        for k, r in enumerate(rows):
            ids[k, : len(r)] = r
            valid[k, : len(r)] = True
        target = None if answer is None else self.answer_ids(answer)
        return GenerativeInstance(question_id, ids, valid, target)

    def answer_ids(self, answer: str) -> list[int]:
        toks = tokenize(answer)
        unknown = [t for t in toks if t not in self.vocab]
        if unknown:
            raise InputError(f"answer tokens outside the vocabulary: {unknown}")
        ids = self.vocab.encode(toks)[: self.config.max_decode_length - 1]
        return ids + [self.vocab.eos_id]

    def _embedding(self, delta: np.ndarray | None) -> Tensor:
        V = self.params["emb.tok"]
        return V if delta is None else V + delta

    # -- model ---------------------------------------------------------------------------
    def encode_fusion(self, inst: GenerativeInstance, delta: np.ndarray | None = None) -> FusionEncoding:
        p, cfg = self.params, self.config
        K, width = inst.ids.shape
        if K > cfg.max_passages:
            raise ValueError(f"{K} passages exceed max_passages={cfg.max_passages}")
        x = T.embedding(self._embedding(delta), inst.ids) + p["enc.pos"][:width]
        mask = nn.key_padding_mask(inst.valid)
        for layer in range(cfg.encoder_layers):
            x = nn.encoder_block(x, p, f"enc.{layer}", cfg.num_heads, key_mask=mask)
        x = nn.layer_norm(x, p, "enc.ln_f")
        flat_valid = np.flatnonzero(inst.valid.reshape(-1))
        memory = T.gather(x.reshape(K * width, cfg.hidden_dim), flat_valid)
        lengths = inst.valid.sum(axis=1)
        ends = np.cumsum(lengths)
        bounds = [(int(e - n), int(e)) for n, e in zip(lengths, ends)]
        pair_ids = np.repeat(np.arange(K), lengths)
        return FusionEncoding(memory, pair_ids, bounds)

    def decode(self, dec_in: list[int], enc: FusionEncoding, delta: np.ndarray | None = None,
               bias_override: dict | None = None) -> Tensor:
        """Log-probabilities (Ty, |V|) of the next token after each decoder input."""
        p, cfg = self.params, self.config
        E = self._embedding(delta)
        n = len(dec_in)
        if n > cfg.max_decode_length + 1:
            raise ValueError("decoder input longer than max_decode_length")
        y = T.embedding(E, np.asarray(dec_in, dtype=np.intp)) + p["dec.pos"][:n]
        causal = nn.causal_mask(n)
        for layer in range(cfg.decoder_layers):
            name = f"dec.{layer}"
            h = nn.layer_norm(y, p, f"{name}.ln1")
            y = y + nn.multi_head_attention(h, h, p, f"{name}.attn", cfg.num_heads, additive=(causal,))
            h = nn.layer_norm(y, p, f"{name}.ln_x")
            bias = p.get(f"{name}.xbias")
            if bias_override is not None:
                bias = bias_override.get(layer, bias)
            y = y + biased_cross_attention(h, enc, p, f"{name}.xattn", cfg.num_heads, bias)
            y = y + nn.feed_forward(nn.layer_norm(y, p, f"{name}.ln2"), p, name)
        y = nn.layer_norm(y, p, "dec.ln_f")
        # tied output projection, rescaled as is usual for shared embeddings
        return T.log_softmax((y @ E.T) * (cfg.hidden_dim ** -0.5), axis=-1)

    def seq2seq_loss(self, inst: GenerativeInstance, delta: np.ndarray | None = None) -> Tensor:
        """Teacher-forced sum of log P(y_i | x, y_<i)."""
        target = inst.target
        if not target or target[-1] != self.vocab.eos_id:
            raise InputError("target must be non-empty and end with [EOS]")
        if max(target) >= self.config.vocabulary_size:
            raise InputError("target token id outside the vocabulary")
        enc = self.encode_fusion(inst, delta)
        logp = self.decode([self.vocab.bos_id] + target[:-1], enc, delta)
        flat = np.arange(len(target)) * self.config.vocabulary_size + np.asarray(target)
        return T.gather(logp.reshape(-1), flat).sum()

    def loss_total(self, inst: GenerativeInstance, adv: AdvConfig, delta: np.ndarray | None = None) -> Tensor:
        """Minimised loss -(alpha * L + beta * L_AT); the perturbation is a constant.

        ``delta`` (V_hat - V) is computed from the current gradient unless given.
        """
        L = self.seq2seq_loss(inst)
        if delta is None and (adv.beta == 0 or adv.epsilon == 0):
            return -(L * adv.alpha + L * adv.beta)
        if delta is None:
            delta = self.perturbation(L, adv.epsilon)
        L_at = self.seq2seq_loss(inst, delta)
        return -(L * adv.alpha + L_at * adv.beta)

    def perturbation(self, L: Tensor, epsilon: float) -> np.ndarray:
        V = self.params["emb.tok"]
        (g,) = T.grad(L, [V])
        return adversarial_perturb(V.data, g, epsilon) - V.data

    def loss_and_grads(self, inst: GenerativeInstance, adv: AdvConfig):
        """Value and parameter gradients of :meth:`loss_total` with one backward per pass."""
        names = list(self.params)
        leaves = [self.params[n] for n in names]
        L = self.seq2seq_loss(inst)
        g_clean = T.grad(L, leaves)
        info = {"l": L.item(), "l_at": L.item()}
        if adv.beta == 0 or adv.epsilon == 0:
            scale = -(adv.alpha + adv.beta)
            return scale * L.item(), {n: scale * g for n, g in zip(names, g_clean)}, info
        V = self.params["emb.tok"].data
        delta = adversarial_perturb(V, g_clean[names.index("emb.tok")], adv.epsilon) - V
        L_at = self.seq2seq_loss(inst, delta)
        g_adv = T.grad(L_at, leaves)
        info["l_at"] = L_at.item()
        value = -(L.item() * adv.alpha + L_at.item() * adv.beta)
        grads = {n: -(adv.alpha * a + adv.beta * b) for n, a, b in zip(names, g_clean, g_adv)}
        return value, grads, info

    # -- inference --------------------------------------------------------------------------
    def _blocked(self) -> np.ndarray:
        blocked = np.zeros(self.config.vocabulary_size, dtype=bool)
        for tok in SPECIAL_TOKENS:
            if tok != EOS:
                blocked[self.vocab.stoi[tok]] = True
        return blocked

    def greedy_decode(self, inst: GenerativeInstance, model_id: str = "generative",
                      return_trace: bool = False):
        """Argmax decoding until [EOS] or max_decode_length tokens.

        Special tokens other than [EOS] are never emitted. The score is the
        mean log-probability of the emitted tokens (including [EOS]).
        """
        blocked = self._blocked()
        out: list[int] = []
        logps: list[float] = []
        trace = []
        with T.no_grad():
            enc = self.encode_fusion(inst)
            for _ in range(self.config.max_decode_length):
                step = self.decode([self.vocab.bos_id] + out, enc).data[-1]
                masked = np.where(blocked, -np.inf, step)
                tok = int(np.argmax(masked))
                trace.append(step.copy())
                logps.append(float(step[tok]))
                if tok == self.vocab.eos_id:
                    break
                out.append(tok)
        answer = " ".join(self.vocab.decode(out))
        pred = ReaderPrediction(inst.question_id, answer, model_id, "generative", float(np.mean(logps)))
        return (pred, trace) if return_trace else pred
