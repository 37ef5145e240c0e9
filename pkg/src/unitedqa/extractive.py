"""Extractive reader: toy transformer encoder plus span scoring machinery.

Inputs are laid out as ``[CLS] question [SEP] passage [SEP]``; passages are
truncated to fit ``max_sequence_length`` and rows are padded to the longest
pair of the batch. Position 0 (``[CLS]``) doubles as the NULL
begin/end position. Span positions are written ``(k, i)``: passage index ``k``
and hidden-state index ``i``.

Probability spaces
  * passage level ``PassageLevel(k)``: softmax over passage ``k``'s tokens plus NULL;
  * multi-passage level ``MultiPassageLevel()``: softmax over the passage tokens
    of all K passages, NULL excluded.

All losses here are log-likelihoods (larger is better) except
:func:`loss_pdr`, which is a divergence; :meth:`ExtractiveReader.loss_total`
returns the quantity that is minimised, ``-L_EXT + gamma * L_PDR``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .records import InputError, ReaderPrediction
from .rng import make_rng
from .tensor import Tensor
from .text import Vocab, normalize_answer, tokenize

log = logging.getLogger(__name__)

NULL = 0


class UnanswerableError(ValueError):
    """No correct span exists in the requested probability space."""


@dataclass(frozen=True)
class EncoderConfig:
    vocabulary_size: int
    num_layers: int = 2
    hidden_dim: int = 32
    num_heads: int = 2
    max_sequence_length: int = 64
    ff_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("vocabulary_size", "num_layers", "hidden_dim", "num_heads",
                     "max_sequence_length", "ff_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if self.max_sequence_length < 4:
            raise ValueError("max_sequence_length must leave room for [CLS]/[SEP] tokens")


@dataclass(frozen=True)
class PdrConfig:
    noise_scale: float = 1e-3
    gamma: float = 4.0

    def __post_init__(self):
        if self.noise_scale < 0 or self.gamma < 0:
            raise ValueError("noise_scale and gamma must be non-negative")


@dataclass(frozen=True)
class PassageLevel:
    k: int


@dataclass(frozen=True)
class MultiPassageLevel:
    pass


@dataclass(frozen=True)
class PairLayout:
    """Where passage tokens sit inside one encoded row."""

    passage_start: int
    passage_length: int

    @property
    def n_tokens(self) -> int:
        return self.passage_start + self.passage_length + 1

    def positions(self) -> range:
        return range(self.passage_start, self.passage_start + self.passage_length)


@dataclass
class EncodedPair:
    token_ids: list[int]
    tokens: list[str]
    hidden: Tensor
    passage_index: int
    passage_positions: dict[int, int]
    null_position: int = NULL


@dataclass
class SpanLogits:
    begin: Tensor  # (K, T)
    end: Tensor  # (K, T)
    layouts: list[PairLayout]

    @property
    def num_passages(self) -> int:
        return len(self.layouts)

    def same_positions(self, other: "SpanLogits") -> bool:
        return self.layouts == other.layouts and self.begin.shape == other.begin.shape


@dataclass
class ProbTable:
    space: PassageLevel | MultiPassageLevel
    positions: list[tuple[int, int]]
    log_pb: Tensor
    log_pe: Tensor
    log_zb: Tensor
    log_ze: Tensor
    index: dict[tuple[int, int], int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {p: n for n, p in enumerate(self.positions)}

    @property
    def pb(self) -> np.ndarray:
        return np.exp(self.log_pb.data)

    @property
    def pe(self) -> np.ndarray:
        return np.exp(self.log_pe.data)

    def locate(self, pos) -> int:
        try:
            return self.index[tuple(pos)]
        except KeyError:
            raise ValueError(f"position {pos} is outside the table's probability space") from None


SpanSet = dict  # passage index -> list of (begin, end) positions


def span_logits(hidden: Tensor, w_b: Tensor, w_e: Tensor) -> tuple[Tensor, Tensor]:
    """Begin and end scores ``w_b . h_i`` and ``w_e . h_j`` for every row of ``hidden``."""
    d = hidden.shape[-1]
    if w_b.shape != (d,) or w_e.shape != (d,):
        raise ValueError(f"span weights must have shape ({d},), got {w_b.shape} and {w_e.shape}")
    return hidden @ w_b.reshape(d, 1), hidden @ w_e.reshape(d, 1)


def _space_positions(logits: SpanLogits, space) -> list[tuple[int, int]]:
    if isinstance(space, PassageLevel):
        if not 0 <= space.k < logits.num_passages:
            raise ValueError(f"passage {space.k} not in logits with {logits.num_passages} passages")
        return [(space.k, NULL)] + [(space.k, i) for i in logits.layouts[space.k].positions()]
    if isinstance(space, MultiPassageLevel):
        return [(k, i) for k, lay in enumerate(logits.layouts) for i in lay.positions()]
    raise TypeError(f"unknown probability space {space!r}")


def normalize(logits: SpanLogits, space) -> ProbTable:
    """Log-sum-exp normalised begin/end distributions over ``space``."""
    if logits.num_passages < 1:
        raise ValueError("need at least one passage")
    positions = _space_positions(logits, space)
    if not positions:
        raise ValueError("probability space has no positions")
    width = logits.begin.shape[1]
    flat_idx = np.array([k * width + i for k, i in positions], dtype=np.intp)
    sb = T.gather(logits.begin.reshape(-1), flat_idx)
    se = T.gather(logits.end.reshape(-1), flat_idx)
    zb, ze = T.logsumexp(sb), T.logsumexp(se)
    return ProbTable(space, positions, sb - zb, se - ze, zb, ze)


def span_prob(table: ProbTable, i, j) -> float:
    """P_s(i, j) = P_b(i) * P_e(j)."""
    bi, ej = table.locate(i), table.locate(j)
    if tuple(i)[0] == tuple(j)[0] and tuple(i)[1] > tuple(j)[1]:
        raise ValueError("span begin must not come after its end")
    return float(np.exp(table.log_pb.data[bi])) * float(np.exp(table.log_pe.data[ej]))


def answer_string_score(table: ProbTable, spans) -> float:
    """P_a(y): summed probability of the spans realising one answer string."""
    return float(sum(span_prob(table, i, j) for i, j in spans))


def _span_log_probs(table: ProbTable, spans) -> Tensor:
    spans = list(spans)
    if not spans:
        raise UnanswerableError("no correct span in this probability space")
    ib = np.array([table.locate(i) for i, _ in spans], dtype=np.intp)
    ie = np.array([table.locate(j) for _, j in spans], dtype=np.intp)
    return T.gather(table.log_pb, ib) + T.gather(table.log_pe, ie)


def loss_mml(table: ProbTable, spans) -> Tensor:
    """log sum over correct spans of P_s(i, j)."""
    return T.logsumexp(_span_log_probs(table, spans))


def loss_hardem(table: ProbTable, spans) -> Tensor:
    """log of the largest correct-span probability."""
    return T.reduce_max(_span_log_probs(table, spans))


def find_correct_spans(passages: list[list[str]], gold_answers: list[str],
                       max_span_length: int = 10) -> SpanSet:
    """Token windows whose normalised text equals a normalised gold answer.

    Coordinates are passage-token indices ``(s, e)`` inclusive. Windows whose
    first or last token normalises to nothing (punctuation, articles) are
    skipped so that "Paris ." and "the Paris" do not duplicate "Paris".
    """
    if not gold_answers:
        raise ValueError("gold_answers must be non-empty")
    golds = {normalize_answer(g) for g in gold_answers} - {""}
    longest = max((len(g.split()) for g in golds), default=0)
    out: SpanSet = {}
    for k, toks in enumerate(passages):
        norm = [normalize_answer(t) for t in toks]
        found = []
        for s in range(len(toks)):
            if not norm[s]:
                continue
            for e in range(s, min(len(toks), s + max_span_length)):
                if not norm[e]:
                    continue
                text = " ".join(x for x in norm[s:e + 1] if x)
                if len(text.split()) > longest:
                    break
                if text in golds:
                    found.append((s, e))
        if found:
            out[k] = found
    return out


def _passage_level_log_probs(scores: Tensor, layouts: list[PairLayout]) -> Tensor:
    """Row-wise passage-level log-probabilities for all K passages at once."""
    mask = np.full(scores.shape, nn.NEG_INF)
    for k, lay in enumerate(layouts):
        mask[k, NULL] = 0.0
        mask[k, lay.passage_start:lay.passage_start + lay.passage_length] = 0.0
    masked = scores + mask
    return masked - T.logsumexp(masked, axis=1, keepdims=True)


def loss_multi_objective(logits: SpanLogits, spans: SpanSet) -> Tensor:
    """L_EXT: multi-passage HardEM plus the mean of K passage-level MML terms.

    ``spans`` maps passage index to hidden-coordinate ``(i, j)`` pairs. A
    passage without a correct span contributes its (NULL, NULL) span.
    """
    flat = [((k, i), (k, j)) for k in sorted(spans) for i, j in spans[k]]
    if not flat:
        raise UnanswerableError("no correct span in any passage")
    hard = loss_hardem(normalize(logits, MultiPassageLevel()), flat)

    K, width = logits.begin.shape
    lpb = _passage_level_log_probs(logits.begin, logits.layouts).reshape(-1)
    lpe = _passage_level_log_probs(logits.end, logits.layouts).reshape(-1)
    per = [spans.get(k) or [(NULL, NULL)] for k in range(K)]
    width_s = max(len(p) for p in per)
    ib = np.zeros((K, width_s), dtype=np.intp)
    ie = np.zeros((K, width_s), dtype=np.intp)
    pad = np.full((K, width_s), nn.NEG_INF)
    for k, lst in enumerate(per):
        for n, (i, j) in enumerate(lst):
            ib[k, n], ie[k, n], pad[k, n] = k * width + i, k * width + j, 0.0
    span_lp = T.gather(lpb, ib) + T.gather(lpe, ie) + pad
    mml = T.logsumexp(span_lp, axis=1).sum() * (1.0 / K)
    return hard + mml


def hellinger_sq(log_p: Tensor, log_q: Tensor) -> Tensor:
    """Squared Hellinger distance 1/2 sum (sqrt p - sqrt q)^2 from log-probabilities."""
    diff = T.exp(log_p * 0.5) - T.exp(log_q * 0.5)
    return (diff * diff).sum() * 0.5


def loss_pdr(logits_clean: SpanLogits, logits_noisy: SpanLogits) -> Tensor:
    """Begin plus end squared Hellinger distance at the multi-passage level."""
    if not logits_clean.same_positions(logits_noisy):
        raise ValueError("clean and noisy logits cover different position sets")
    a = normalize(logits_clean, MultiPassageLevel())
    b = normalize(logits_noisy, MultiPassageLevel())
    return hellinger_sq(a.log_pb, b.log_pb) + hellinger_sq(a.log_pe, b.log_pe)


@dataclass
class ExtractiveInstance:
    """One question with its encoded passages, prepared once and reused."""

    question_id: str
    ids: np.ndarray  # (K, T) int
    valid: np.ndarray  # (K, T) bool
    layouts: list[PairLayout]
    passage_tokens: list[list[str]]  # kept (possibly truncated) surface tokens
    spans: SpanSet  # hidden coordinates
    _candidates: tuple | None = field(default=None, repr=False)

    @property
    def trainable(self) -> bool:
        return any(self.spans.values())


class ExtractiveReader:
    """Randomly initialised transformer encoder with begin/end span heads."""

    model_type = "extractive"

    def __init__(self, config: EncoderConfig, vocab: Vocab, params: dict | None = None,
                 max_span_length: int = 10):
        if config.vocabulary_size != len(vocab):
            raise ValueError("config.vocabulary_size does not match the vocabulary")
        self.config = config
        self.vocab = vocab
        self.max_span_length = max_span_length
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> dict:
        cfg = self.config
        rng = make_rng(cfg.seed, "extractive", "init")
        d = cfg.hidden_dim
        p = {
            "emb.tok": T.parameter(rng.normal(0.0, 1.0, size=(cfg.vocabulary_size, d)), "emb.tok"),
            "emb.pos": T.parameter(rng.normal(0.0, 0.1, size=(cfg.max_sequence_length, d)), "emb.pos"),
        }
        for layer in range(cfg.num_layers):
            nn.init_block(p, rng, f"enc.{layer}", d, cfg.ff_dim)
        nn.init_layer_norm(p, "enc.ln_f", d)
        p["span.w_b"] = T.parameter(rng.normal(0.0, d ** -0.5, size=d), "span.w_b")
        p["span.w_e"] = T.parameter(rng.normal(0.0, d ** -0.5, size=d), "span.w_e")
        return p

    # -- layout and encoding -------------------------------------------------
    def layout(self, question_tokens: list[str], passages_tokens: list[list[str]]):
        limit = self.config.max_sequence_length
        if len(question_tokens) + 3 > limit:
            raise InputError(f"question of {len(question_tokens)} tokens exceeds max_sequence_length {limit}")
        start = len(question_tokens) + 2
        room = limit - start - 1
        # rows are padded to the longest pair in this batch, not to the limit
        width = start + 1 + max((min(len(t), room) for t in passages_tokens), default=0)
        q_ids = self.vocab.encode(question_tokens)
        ids = np.zeros((len(passages_tokens), width), dtype=np.intp)
        valid = np.zeros((len(passages_tokens), width), dtype=bool)
        layouts, kept = [], []
        for k, toks in enumerate(passages_tokens):
            toks = toks[:room]
            row = [self.vocab.cls_id, *q_ids, self.vocab.sep_id, *self.vocab.encode(toks), self.vocab.sep_id]
            ids[k, : len(row)] = row
            valid[k, : len(row)] = True
            layouts.append(PairLayout(start, len(toks)))
            kept.append(list(toks))
        return ids, valid, layouts, kept

    def encode(self, ids: np.ndarray, valid: np.ndarray, noise: np.ndarray | None = None) -> Tensor:
        """Hidden states (B, T, d); ``noise`` is added to the token embeddings."""
        p, cfg = self.params, self.config
        x = T.embedding(p["emb.tok"], ids)
        if noise is not None:
            x = x + noise
        x = x + p["emb.pos"][: ids.shape[1]]
        mask = nn.key_padding_mask(valid)
        for layer in range(cfg.num_layers):
            x = nn.encoder_block(x, p, f"enc.{layer}", cfg.num_heads, key_mask=mask)
        return nn.layer_norm(x, p, "enc.ln_f")

    def encode_pair(self, question: str, passage: str, passage_index: int = 0) -> EncodedPair:
        q_toks, p_toks = tokenize(question), tokenize(passage)
        ids, valid, layouts, _ = self.layout(q_toks, [p_toks])
        hidden = self.encode(ids, valid)
        lay = layouts[0]
        n = lay.n_tokens
        surface = ["[CLS]", *q_toks, "[SEP]", *p_toks[: lay.passage_length], "[SEP]"]
        return EncodedPair(
            token_ids=[int(t) for t in ids[0, :n]],
            tokens=surface,
            hidden=hidden[0, :n],
            passage_index=passage_index,
            passage_positions={lay.passage_start + t: t for t in range(lay.passage_length)},
        )

    def span_logits(self, hidden: Tensor, layouts: list[PairLayout]) -> SpanLogits:
        b, e = span_logits(hidden, self.params["span.w_b"], self.params["span.w_e"])
        K, width = hidden.shape[0], hidden.shape[1]
        return SpanLogits(b.reshape(K, width), e.reshape(K, width), layouts)

    def forward(self, inst: ExtractiveInstance, noise: np.ndarray | None = None) -> SpanLogits:
        return self.span_logits(self.encode(inst.ids, inst.valid, noise), inst.layouts)

    # -- instances ---------------------------------------------------------------
    def prepare(self, question_id: str, question: str, passages: list[str],
                gold_answers: list[str] | None = None) -> ExtractiveInstance:
        if not passages:
            raise ValueError("need at least one passage")
        ids, valid, layouts, kept = self.layout(tokenize(question), [tokenize(p) for p in passages])
        spans: SpanSet = {}
        if gold_answers:
            found = find_correct_spans(kept, gold_answers, self.max_span_length)
            for k, lst in found.items():
                off = layouts[k].passage_start
                spans[k] = [(off + s, off + e) for s, e in lst]
        return ExtractiveInstance(question_id, ids, valid, layouts, kept, spans)

    # -- training objective --------------------------------------------------------
    def loss_total(self, inst: ExtractiveInstance, pdr: PdrConfig,
                   rng: np.random.Generator | None = None, noise: np.ndarray | None = None):
        """Minimised loss ``-L_EXT + gamma * L_PDR`` and its parts.

        Noise for the PDR pass is ``noise`` if given, else drawn from ``rng``
        with standard deviation ``pdr.noise_scale``. The clean and noisy passes
        share one batched encoder call.
        """
        if not inst.trainable:
            raise UnanswerableError(f"question {inst.question_id!r} has no correct span")
        K, width = inst.ids.shape
        use_pdr = pdr.gamma > 0 and (noise is not None or pdr.noise_scale > 0)
        if not use_pdr:
            logits = self.forward(inst)
            l_ext = loss_multi_objective(logits, inst.spans)
            return -l_ext, {"l_ext": l_ext.item(), "l_pdr": 0.0}
        if noise is None:
            noise = rng.normal(0.0, pdr.noise_scale, size=(K, width, self.config.hidden_dim))
        both = np.concatenate([np.zeros_like(noise), noise], axis=0)
        hidden = self.encode(np.concatenate([inst.ids, inst.ids]), np.concatenate([inst.valid, inst.valid]), both)
        logits = self.span_logits(hidden, inst.layouts + inst.layouts)
        clean = SpanLogits(logits.begin[:K], logits.end[:K], inst.layouts)
        noisy = SpanLogits(logits.begin[K:], logits.end[K:], inst.layouts)
        l_ext = loss_multi_objective(clean, inst.spans)
        l_pdr = loss_pdr(clean, noisy)
        total = -l_ext + l_pdr * pdr.gamma
        return total, {"l_ext": l_ext.item(), "l_pdr": l_pdr.item()}

    # -- inference ---------------------------------------------------------------------
    def _candidates(self, inst: ExtractiveInstance):
        if inst._candidates is not None:
            return inst._candidates
        width = inst.ids.shape[1]
        groups: dict[str, int] = {}
        ib, ie, gid = [], [], []
        surface: list[list[str]] = []
        for k, (lay, toks) in enumerate(zip(inst.layouts, inst.passage_tokens)):
            for s in range(len(toks)):
                for e in range(s, min(len(toks), s + self.max_span_length)):
                    raw = " ".join(toks[s:e + 1])
                    key = normalize_answer(raw)
                    if not key:
                        continue
                    if key not in groups:
                        groups[key] = len(groups)
                        surface.append([])
                    g = groups[key]
                    ib.append(k * width + lay.passage_start + s)
                    ie.append(k * width + lay.passage_start + e)
                    gid.append(g)
                    surface[g].append(raw)
        keys = sorted(groups, key=groups.get)
        inst._candidates = (np.array(ib, dtype=np.intp), np.array(ie, dtype=np.intp),
                            np.array(gid, dtype=np.intp), keys, surface)
        return inst._candidates

    def predict(self, inst: ExtractiveInstance, top_n: int = 1, model_id: str = "extractive") -> list[ReaderPrediction]:
        """Top answer strings ranked by P_a over the multi-passage table.

        Ties are broken by earlier first occurrence, then by the string.
        """
        with T.no_grad():
            logits = self.forward(inst)
        table = normalize(logits, MultiPassageLevel())
        width = inst.ids.shape[1]
        pb = np.zeros(inst.ids.size)
        pe = np.zeros(inst.ids.size)
        flat = np.array([k * width + i for k, i in table.positions], dtype=np.intp)
        pb[flat], pe[flat] = table.pb, table.pe
        return rank_candidates(pb, pe, self._candidates(inst), inst.question_id, top_n, model_id)


def rank_candidates(pb: np.ndarray, pe: np.ndarray, candidates, question_id: str,
                    top_n: int, model_id: str) -> list[ReaderPrediction]:
    ib, ie, gid, keys, surface = candidates
    if not keys:
        return []
    probs = pb[ib] * pe[ie]
    score = np.bincount(gid, weights=probs, minlength=len(keys))
    # groups are numbered by first occurrence, so the group id is the tie-break
    ranked = sorted(range(len(keys)), key=lambda g: (-score[g], g, keys[g]))[:top_n]
    out = []
    for g in ranked:
        members = np.flatnonzero(gid == g)
        best = members[np.argmax(probs[members])]
        raw = surface[g][list(members).index(best)]
        out.append(ReaderPrediction(question_id, raw, model_id, "extractive", float(score[g])))
    return out

