"""The sentence-extraction policy network.

Three encoders feed a small extractor head:

* a local sentence encoder (token embeddings -> bi-LSTM -> multi-head
  attention pooling) producing one vector per sentence,
* a global context encoder (bi-LSTM over the sentence sequence),
* an extraction-history encoder (stacked multi-head attention of every
  sentence over the already-extracted sentences, residual + layer norm).

Per remaining sentence the extractor emits a raw selection score and a stop
logit.  Scores pass through a logistic to positive weights ``u_j`` that are
normalized over the remaining set into selection probabilities; the stop
probability is the logistic of the mean stop logit.  A joint action is
"stop" with probability ``p_stop`` (uniform over remaining sentences) or
"select sentence j" with probability ``(1 - p_stop) * u_j / sum(u)``.

Everything is built on :mod:`lexsum.autodiff`, so the same forward code
serves sampling (under ``no_grad``), deterministic inference, and exact
gradient computation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Document, Vocab

MASK_BIAS = 1e9  # additive mask; large enough to zero softmax weight in f32


class NumericsError(Exception):
    """Non-finite values where finite ones are required (CLI exit code 3)."""


@dataclass(frozen=True)
class PolicyConfig:
    """Architecture dimensions; all learnable shapes derive from these."""

    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    attention_heads: int = 4
    history_layers: int = 2
    max_sentences: int = 200
    max_tokens_per_sentence: int = 40

    def __post_init__(self):
        if min(
            self.vocab_size, self.embed_dim, self.hidden_dim, self.attention_heads,
            self.history_layers, self.max_sentences, self.max_tokens_per_sentence,
        ) < 1:
            raise ValueError("all PolicyConfig dimensions must be >= 1")
        if self.hidden_dim % self.attention_heads != 0:
            raise ValueError("hidden_dim must be divisible by attention_heads")
        if self.hidden_dim % 2 != 0:
            raise ValueError("hidden_dim must be even (bi-directional halves)")


def param_spec(config: PolicyConfig) -> dict[str, tuple[int, ...]]:
    """Tensor name -> shape, in canonical (checkpoint manifest) order."""
    d_e, d_h = config.embed_dim, config.hidden_dim
    d_l = d_h // 2
    spec: dict[str, tuple[int, ...]] = {"embedding": (config.vocab_size, d_e)}
    for prefix, in_dim in (
        ("local_fwd", d_e), ("local_bwd", d_e),
        ("global_fwd", d_h), ("global_bwd", d_h),
    ):
        spec[f"{prefix}_wx"] = (in_dim, 4 * d_l)
        spec[f"{prefix}_wh"] = (d_l, 4 * d_l)
        spec[f"{prefix}_b"] = (4 * d_l,)
    spec["mhp_queries"] = (d_h, config.attention_heads)
    spec["mhp_value_w"] = (d_h, d_h)
    spec["mhp_value_b"] = (d_h,)
    spec["mhp_out_w"] = (d_h, d_h)
    spec["mhp_out_b"] = (d_h,)
    spec["global_proj_w"] = (d_h, d_h)
    spec["global_proj_b"] = (d_h,)
    spec["history_null"] = (1, d_h)
    for i in range(config.history_layers):
        for name in ("wq", "wk", "wv", "wo"):
            spec[f"hist{i}_{name}"] = (d_h, d_h)
        for name in ("bq", "bk", "bv", "bo"):
            spec[f"hist{i}_{name}"] = (d_h,)
        spec[f"hist{i}_ln_gamma"] = (d_h,)
        spec[f"hist{i}_ln_beta"] = (d_h,)
    spec["extract_w1"] = (3 * d_h, d_h)
    spec["extract_b1"] = (d_h,)
    spec["extract_w2"] = (d_h, 2)
    spec["extract_b2"] = (2,)
    return spec


class PolicyParams:
    """Named parameter tensors, float32 by default.

    Iteration order matches :func:`param_spec`, which fixes the checkpoint
    payload layout and the order of random draws at initialization.
    """

    def __init__(self, tensors: Mapping[str, np.ndarray]):
        self.tensors: dict[str, np.ndarray] = dict(tensors)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy(self) -> "PolicyParams":
        return PolicyParams({n: a.copy() for n, a in self.tensors.items()})

    def astype(self, dtype) -> "PolicyParams":
        return PolicyParams({n: a.astype(dtype) for n, a in self.tensors.items()})

    def finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.tensors.values())

    def validate(self, config: PolicyConfig) -> None:
        spec = param_spec(config)
        if list(spec) != list(self.tensors):
            raise ValueError("parameter names do not match the config")
        for name, shape in spec.items():
            if self.tensors[name].shape != shape:
                raise ValueError(
                    f"tensor {name}: expected shape {shape}, "
                    f"got {self.tensors[name].shape}"
                )


def init_params(
    config: PolicyConfig, seed: int, dtype=np.float32
) -> PolicyParams:
    """Deterministic initialization.

    Weights are uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases and the
    null history context start at zero, layer-norm scale at one, and the
    LSTM forget-gate bias slice at one to keep early memory open.
    """
    rng = np.random.default_rng(seed)
    d_l = config.hidden_dim // 2
    lstm_biases = {"local_fwd_b", "local_bwd_b", "global_fwd_b", "global_bwd_b"}
    tensors: dict[str, np.ndarray] = {}
    for name, shape in param_spec(config).items():
        if name.endswith("_ln_gamma"):
            arr = np.ones(shape)
        elif name == "history_null" or name.endswith(
            ("_b", "_b1", "_b2", "_bq", "_bk", "_bv", "_bo", "_ln_beta")
        ):
            arr = np.zeros(shape)
            if name in lstm_biases:
                arr[d_l : 2 * d_l] = 1.0  # forget gate
        else:
            fan_in = shape[0] if len(shape) == 2 else shape[-1]
            bound = 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        tensors[name] = arr.astype(dtype)
    return PolicyParams(tensors)


@dataclass(frozen=True)
class Action:
    """Stop the extraction, or select one remaining sentence."""

    stop: bool
    sentence_index: int | None = None

    def __post_init__(self):
        if not self.stop and self.sentence_index is None:
            raise ValueError("a non-stop action needs a sentence_index")


@dataclass(frozen=True)
class ExtractionState:
    """Which sentences have been extracted so far, and which remain."""

    document: Document
    extracted: tuple[int, ...]
    remaining: tuple[int, ...]

    @property
    def t(self) -> int:
        return len(self.extracted)

    @classmethod
    def initial(cls, document: Document, max_sentences: int) -> "ExtractionState":
        n = min(len(document.sentences), max_sentences)
        return cls(document=document, extracted=(), remaining=tuple(range(n)))

    def advance(self, sentence_index: int) -> "ExtractionState":
        if sentence_index not in self.remaining:
            raise ValueError(f"sentence {sentence_index} is not selectable")
        return ExtractionState(
            document=self.document,
            extracted=self.extracted + (sentence_index,),
            remaining=tuple(i for i in self.remaining if i != sentence_index),
        )


@dataclass(frozen=True)
class ActionDistribution:
    """Stop probability plus selection probabilities over remaining sentences."""

    stop_prob: float
    remaining: tuple[int, ...]
    sentence_probs: np.ndarray

    def prob_of(self, action: Action) -> float:
        """Joint probability of one action under the stop/select factorization."""
        m = len(self.remaining)
        if action.stop:
            return self.stop_prob * (1.0 / m)
        pos = self.remaining.index(action.sentence_index)
        return (1.0 - self.stop_prob) * float(self.sentence_probs[pos])


def log_prob(distribution: ActionDistribution, action: Action) -> float:
    """Log probability of an action; exactly zero probability is a bug signal."""
    p = distribution.prob_of(action)
    if p <= 0.0:
        raise NumericsError(
            f"action has probability {p}; the logistic parameterization "
            "cannot produce this without numeric overflow"
        )
    return math.log(p)


def sample_action(
    distribution: ActionDistribution, rng: np.random.Generator
) -> Action:
    """Draw stop ~ Bernoulli(p_stop), then a sentence if not stopping."""
    if rng.random() < distribution.stop_prob:
        return Action(stop=True)
    p = distribution.sentence_probs.astype(np.float64)
    p /= p.sum()
    pos = int(rng.choice(len(p), p=p))
    return Action(stop=False, sentence_index=distribution.remaining[pos])


@dataclass
class EncodedDocument:
    """Local and global sentence encodings, reusable across episode steps."""

    local: Tensor
    global_: Tensor


class PolicyNetwork:
    """Bundles config, vocabulary and parameters behind the forward ops."""

    def __init__(self, config: PolicyConfig, vocab: Vocab, params: PolicyParams):
        if len(vocab) != config.vocab_size:
            raise ValueError(
                f"vocab has {len(vocab)} entries, config says {config.vocab_size}"
            )
        params.validate(config)
        self.config = config
        self.vocab = vocab
        self.params = params

    # -- plumbing ------------------------------------------------------------

    def _tensors(self, tensors: Mapping[str, Tensor] | None) -> Mapping[str, Tensor]:
        if tensors is not None:
            return tensors
        return {n: Tensor(a, name=n) for n, a in self.params.tensors.items()}

    def _ids_and_mask(self, document: Document) -> tuple[np.ndarray, np.ndarray]:
        """Token id matrix (N, L) and validity mask; empty sentences get one
        unmasked PAD slot so pooling stays well defined."""
        cfg = self.config
        n = min(len(document.sentences), cfg.max_sentences)
        lengths = [
            max(1, min(len(document.sentences[i].tokens), cfg.max_tokens_per_sentence))
            for i in range(n)
        ]
        width = max(lengths) if lengths else 1
        ids = np.zeros((n, width), dtype=np.int64)
        mask = np.zeros((n, width), dtype=self.params.dtype)
        for i in range(n):
            toks = document.sentences[i].tokens[: cfg.max_tokens_per_sentence]
            ids[i, : len(toks)] = self.vocab.encode(toks)
            mask[i, : lengths[i]] = 1.0
        return ids, mask

    def _lstm(
        self,
        inputs: list[Tensor],
        masks: list[np.ndarray] | None,
        tensors: Mapping[str, Tensor],
        prefix: str,
    ) -> list[Tensor]:
        """One direction of an LSTM over a list of (B, d_in) steps.

        ``masks`` holds (B, 1) arrays; masked steps keep the previous state,
        which freezes hidden states across trailing padding.
        """
        wx, wh, b = tensors[f"{prefix}_wx"], tensors[f"{prefix}_wh"], tensors[f"{prefix}_b"]
        d_l = self.config.hidden_dim // 2
        batch = inputs[0].shape[0]
        h = Tensor(np.zeros((batch, d_l), dtype=self.params.dtype))
        c = Tensor(np.zeros((batch, d_l), dtype=self.params.dtype))
        outputs: list[Tensor] = []
        for step, x in enumerate(inputs):
            z = x @ wx + h @ wh + b
            i = ad.sigmoid(z[:, :d_l])
            f = ad.sigmoid(z[:, d_l : 2 * d_l])
            g = ad.tanh(z[:, 2 * d_l : 3 * d_l])
            o = ad.sigmoid(z[:, 3 * d_l :])
            c_new = f * c + i * g
            h_new = o * ad.tanh(c_new)
            if masks is not None:
                m = masks[step]
                keep = 1.0 - m
                c = c_new * m + c * keep
                h = h_new * m + h * keep
            else:
                c, h = c_new, h_new
            outputs.append(h)
        return outputs

    # -- encoders ------------------------------------------------------------

    def encode_local(
        self, document: Document, tensors: Mapping[str, Tensor] | None = None
    ) -> Tensor:
        """Per-sentence embeddings (N, hidden_dim); position independent."""
        tensors = self._tensors(tensors)
        cfg = self.config
        d_h = cfg.hidden_dim
        heads = cfg.attention_heads
        d_k = d_h // heads
        ids, mask = self._ids_and_mask(document)
        n, width = ids.shape
        embedded = tensors["embedding"][ids]  # (N, L, d_e)
        steps = [embedded[:, t, :] for t in range(width)]
        step_masks = [mask[:, t : t + 1] for t in range(width)]
        fwd = self._lstm(steps, step_masks, tensors, "local_fwd")
        bwd = self._lstm(steps[::-1], step_masks[::-1], tensors, "local_bwd")[::-1]
        token_states = ad.concat(
            [
                ad.concat(fwd, axis=1).reshape(n, width, d_h // 2),
                ad.concat(bwd, axis=1).reshape(n, width, d_h // 2),
            ],
            axis=2,
        )  # (N, L, d_h)
        flat = token_states.reshape(n * width, d_h)
        scores = (flat @ tensors["mhp_queries"]).reshape(n, width, heads)
        scores = scores.swapaxes(1, 2)  # (N, heads, L)
        scores = scores + ((mask - 1.0) * MASK_BIAS)[:, None, :]
        attn = ad.softmax(scores, axis=-1)
        values = (flat @ tensors["mhp_value_w"] + tensors["mhp_value_b"]).reshape(
            n, width, heads, d_k
        ).swapaxes(1, 2)  # (N, heads, L, d_k)
        pooled = (attn.reshape(n, heads, 1, width) @ values).reshape(n, d_h)
        return pooled @ tensors["mhp_out_w"] + tensors["mhp_out_b"]

    def encode_global(
        self, local: Tensor, tensors: Mapping[str, Tensor] | None = None
    ) -> Tensor:
        """Document-context encoding (N, hidden_dim) from a bi-LSTM over
        the sentence sequence."""
        tensors = self._tensors(tensors)
        n = local.shape[0]
        steps = [local[t : t + 1, :] for t in range(n)]
        fwd = self._lstm(steps, None, tensors, "global_fwd")
        bwd = self._lstm(steps[::-1], None, tensors, "global_bwd")[::-1]
        both = ad.concat(
            [ad.concat(fwd, axis=0), ad.concat(bwd, axis=0)], axis=1
        )  # (N, d_h)
        return both @ tensors["global_proj_w"] + tensors["global_proj_b"]

    def encode_history(
        self,
        local: Tensor,
        extracted: Sequence[int],
        tensors: Mapping[str, Tensor] | None = None,
    ) -> Tensor:
        """History encoding (N, hidden_dim): sentences attend over the local
        embeddings of already-extracted sentences.

        Before anything is extracted the attention context is a learned null
        vector, so step 0 is well defined.
        """
        tensors = self._tensors(tensors)
        cfg = self.config
        d_h = cfg.hidden_dim
        heads = cfg.attention_heads
        d_k = d_h // heads
        scale = 1.0 / math.sqrt(d_k)
        n = local.shape[0]
        if extracted:
            context = local[np.asarray(extracted)]
        else:
            context = tensors["history_null"]
        m = context.shape[0]
        x = local
        for layer in range(cfg.history_layers):
            p = f"hist{layer}"
            q = (x @ tensors[f"{p}_wq"] + tensors[f"{p}_bq"]).reshape(
                n, heads, d_k
            ).swapaxes(0, 1)
            k = (context @ tensors[f"{p}_wk"] + tensors[f"{p}_bk"]).reshape(
                m, heads, d_k
            ).swapaxes(0, 1)
            v = (context @ tensors[f"{p}_wv"] + tensors[f"{p}_bv"]).reshape(
                m, heads, d_k
            ).swapaxes(0, 1)
            attn = ad.softmax((q @ k.swapaxes(-1, -2)) * scale, axis=-1)
            ctx = (attn @ v).swapaxes(0, 1).reshape(n, d_h)
            out = ctx @ tensors[f"{p}_wo"] + tensors[f"{p}_bo"]
            x = ad.layer_norm(
                x + out, tensors[f"{p}_ln_gamma"], tensors[f"{p}_ln_beta"]
            )
        return x

    def encode_document(self, document: Document) -> EncodedDocument:
        """Local + global encodings; these do not depend on extraction state."""
        tensors = self._tensors(None)
        local = self.encode_local(document, tensors)
        return EncodedDocument(local=local, global_=self.encode_global(local, tensors))

    # -- the action distribution ----------------------------------------------

    def _remaining_outputs(
        self,
        state: ExtractionState,
        local: Tensor,
        global_: Tensor,
        tensors: Mapping[str, Tensor],
    ) -> tuple[Tensor, Tensor]:
        """(selection weights u, stop probability) for the remaining set."""
        if not state.remaining:
            raise ValueError("no remaining sentences: extraction has terminated")
        history = self.encode_history(local, state.extracted, tensors)
        rem = np.asarray(state.remaining)
        features = ad.concat([local[rem], global_[rem], history[rem]], axis=1)
        hidden = ad.tanh(features @ tensors["extract_w1"] + tensors["extract_b1"])
        out = hidden @ tensors["extract_w2"] + tensors["extract_b2"]  # (m, 2)
        u = ad.sigmoid(out[:, 0])
        p_stop = ad.sigmoid(out[:, 1].mean())
        return u, p_stop

    def action_log_prob(
        self,
        state: ExtractionState,
        action: Action,
        local: Tensor,
        global_: Tensor,
        tensors: Mapping[str, Tensor],
    ) -> Tensor:
        """Differentiable log pi(action | state)."""
        u, p_stop = self._remaining_outputs(state, local, global_, tensors)
        if action.stop:
            return ad.log(p_stop * (1.0 / len(state.remaining)))
        pos = state.remaining.index(action.sentence_index)
        selection = u[pos] / u.sum()
        return ad.log((1.0 - p_stop) * selection)

    def action_distribution(
        self, state: ExtractionState, cache: EncodedDocument | None = None
    ) -> ActionDistribution:
        """Concrete (detached) action probabilities for sampling/inference."""
        with ad.no_grad():
            if cache is None:
                cache = self.encode_document(state.document)
            tensors = self._tensors(None)
            u, p_stop = self._remaining_outputs(
                state, cache.local, cache.global_, tensors
            )
            probs = (u / u.sum()).data
        if not np.isfinite(probs).all() or not np.isfinite(p_stop.data):
            raise NumericsError("non-finite action distribution")
        return ActionDistribution(
            stop_prob=float(p_stop.data),
            remaining=state.remaining,
            sentence_probs=probs,
        )


# -- checkpoints ---------------------------------------------------------------

CHECKPOINT_MAGIC = b"LEXSUM\x01"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Base for model file problems."""


class CheckpointFormatError(CheckpointError):
    """Bad magic, bad version or malformed header."""


class CheckpointShapeError(CheckpointError):
    """Tensor manifest disagrees with the declared configuration."""


class CheckpointTruncatedError(CheckpointError):
    """Payload shorter than the manifest requires."""


def save_checkpoint(
    params: PolicyParams, config: PolicyConfig, vocab: Vocab, path: str | Path
) -> None:
    """Write magic, a JSON header (version, config, vocab, tensor manifest)
    and little-endian float32 payloads in manifest order.  The write is
    atomic: contents land under a temporary name and are renamed over."""
    params.validate(config)
    manifest = []
    offset = 0
    blobs: list[bytes] = []
    for name, arr in params.tensors.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps(
        {
            "version": CHECKPOINT_VERSION,
            "config": asdict(config),
            "vocab": vocab.tokens(),
            "manifest": manifest,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header).to_bytes(4, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(
    path: str | Path, expected_config: PolicyConfig | None = None
) -> tuple[PolicyParams, PolicyConfig, Vocab]:
    """Read a checkpoint; magic/version, shape and truncation problems raise
    distinct error types."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointFormatError("bad magic: not a model checkpoint")
    header_len = int.from_bytes(
        raw[len(CHECKPOINT_MAGIC) : len(CHECKPOINT_MAGIC) + 4], "little"
    )
    header_start = len(CHECKPOINT_MAGIC) + 4
    if len(raw) < header_start + header_len:
        raise CheckpointTruncatedError("truncated header")
    try:
        header = json.loads(raw[header_start : header_start + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointFormatError(f"malformed header JSON: {exc.msg}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"version mismatch: file has {header.get('version')}, "
            f"reader supports {CHECKPOINT_VERSION}"
        )
    try:
        config = PolicyConfig(**header["config"])
        vocab = Vocab(header["vocab"])
        manifest = header["manifest"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"malformed header: {exc}") from exc
    if expected_config is not None and config != expected_config:
        raise CheckpointShapeError(
            "shape mismatch: checkpoint config differs from the expected one"
        )
    spec = param_spec(config)
    entries = {e["name"]: e for e in manifest}
    if list(entries) != list(spec):
        raise CheckpointShapeError("shape mismatch: unexpected tensor manifest")
    payload = raw[header_start + header_len :]
    tensors: dict[str, np.ndarray] = {}
    for name, shape in spec.items():
        entry = entries[name]
        if tuple(entry["shape"]) != shape:
            raise CheckpointShapeError(
                f"shape mismatch: tensor {name} has {entry['shape']}, "
                f"config implies {list(shape)}"
            )
        count = int(np.prod(shape))
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointTruncatedError(f"truncated payload at tensor {name}")
        tensors[name] = (
            np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
        )
    params = PolicyParams(tensors)
    params.validate(config)
    return params, config, vocab
