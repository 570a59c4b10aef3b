"""REINFORCE training for the extraction policy.

An episode is rolled out by sampling actions until a stop action or the step
cap; the reward (mean ROUGE-1/2/L F1 against the gold summary) arrives only
at the end.  Because the discount is structurally 1, every step's return is
the terminal reward, and one episode contributes the update

    theta <- theta + alpha * R / (T + 1) * grad(sum_t log pi(A_t | S_t))

where T counts sentence selections; the 1/(T+1) factor damps long episodes.
Gradients are exact reverse-mode accumulations through every encoder; a
finite-difference checker validates them at float64.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from . import extraction, metrics
from .autodiff import Tensor
from .corpus import Corpus, DataError, Document, GoldSummary, Vocab, build_vocab
from .oracle import OracleLabel
from .policy import (
    Action,
    EncodedDocument,
    ExtractionState,
    NumericsError,
    PolicyConfig,
    PolicyNetwork,
    PolicyParams,
    init_params,
    log_prob,
    sample_action,
    save_checkpoint,
)

GradientDict = dict[str, np.ndarray]


@dataclass(frozen=True)
class EpisodeStep:
    action: Action
    log_prob: float


@dataclass(frozen=True)
class Episode:
    """One sampled extraction trajectory with its terminal reward."""

    doc_id: str
    steps: tuple[EpisodeStep, ...]
    reward: float

    @property
    def T(self) -> int:
        """Number of sentence-selection steps (the stop step not included)."""
        return sum(1 for s in self.steps if not s.action.stop)

    @property
    def selected(self) -> tuple[int, ...]:
        return tuple(
            s.action.sentence_index for s in self.steps if not s.action.stop
        )


@dataclass(frozen=True)
class TrainerConfig:
    """Optimization hyperparameters.  The reward discount is not one of
    them: returns equal the terminal reward by construction."""

    learning_rate: float = 0.1
    episodes_per_update: int = 4
    samples_per_document: int = 8
    max_steps: int = 50
    total_updates: int = 1000
    seed: int = 0
    eval_interval: int = 20
    stop_threshold: float = 0.65
    optimizer: str = "sgd"
    warm_start_updates: int = 0
    early_stop_val_reward: float = 0.0  # 0 disables early stopping

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.samples_per_document < 1:
            raise ValueError("samples_per_document must be >= 1")
        if self.episodes_per_update < 1:
            raise ValueError("episodes_per_update must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def gamma(self) -> float:
        """Reward discount; fixed at 1 and not configurable."""
        return 1.0


def _episode_reward(document: Document, gold: GoldSummary, selected) -> float:
    if not selected:
        return 0.0
    cand = [document.sentences[i].tokens for i in selected]
    return metrics.reward(cand, gold.sentence_tokens())


def rollout_episode(
    network: PolicyNetwork,
    document: Document,
    gold: GoldSummary,
    rng: np.random.Generator,
    max_steps: int,
    cache: EncodedDocument | None = None,
) -> Episode:
    """Sample one episode; terminates on a stop draw, an exhausted document,
    or after ``max_steps`` selections."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if cache is None:
        with ad.no_grad():
            cache = network.encode_document(document)
    state = ExtractionState.initial(document, network.config.max_sentences)
    steps: list[EpisodeStep] = []
    while state.remaining and state.t < max_steps:
        dist = network.action_distribution(state, cache)
        action = sample_action(dist, rng)
        steps.append(EpisodeStep(action, log_prob(dist, action)))
        if action.stop:
            break
        state = state.advance(action.sentence_index)
    return Episode(
        doc_id=document.id,
        steps=tuple(steps),
        reward=_episode_reward(document, gold, state.extracted),
    )


def select_training_episode(
    network: PolicyNetwork,
    document: Document,
    gold: GoldSummary,
    rng: np.random.Generator,
    k: int,
    max_steps: int,
    cache: EncodedDocument | None = None,
) -> Episode:
    """Best-of-k episode sampling; ties keep the first sampled."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if cache is None:
        with ad.no_grad():
            cache = network.encode_document(document)
    best: Episode | None = None
    for _ in range(k):
        episode = rollout_episode(network, document, gold, rng, max_steps, cache)
        if best is None or episode.reward > best.reward:
            best = episode
    return best


def teacher_episode(
    network: PolicyNetwork,
    document: Document,
    label: OracleLabel,
    gold: GoldSummary,
    max_steps: int,
    cache: EncodedDocument | None = None,
) -> Episode:
    """Replay oracle-label selections as a forced episode (warm start)."""
    if cache is None:
        with ad.no_grad():
            cache = network.encode_document(document)
    state = ExtractionState.initial(document, network.config.max_sentences)
    steps: list[EpisodeStep] = []
    for idx in label.indices:
        if idx not in state.remaining or state.t >= max_steps:
            break
        dist = network.action_distribution(state, cache)
        action = Action(stop=False, sentence_index=idx)
        steps.append(EpisodeStep(action, log_prob(dist, action)))
        state = state.advance(idx)
    if state.remaining and state.t < max_steps:
        dist = network.action_distribution(state, cache)
        action = Action(stop=True)
        steps.append(EpisodeStep(action, log_prob(dist, action)))
    return Episode(
        doc_id=document.id,
        steps=tuple(steps),
        reward=_episode_reward(document, gold, state.extracted),
    )


def episode_log_prob(
    network: PolicyNetwork, document: Document, episode: Episode
) -> float:
    """Replay an episode and return sum_t log pi(A_t | S_t), without a graph."""
    with ad.no_grad():
        tensors = network._tensors(None)
        local = network.encode_local(document, tensors)
        global_ = network.encode_global(local, tensors)
        state = ExtractionState.initial(document, network.config.max_sentences)
        total = 0.0
        for step in episode.steps:
            term = network.action_log_prob(
                state, step.action, local, global_, tensors
            )
            total += float(term.data)
            if not step.action.stop:
                state = state.advance(step.action.sentence_index)
    return total


def grad_log_prob(
    network: PolicyNetwork, document: Document, episode: Episode
) -> GradientDict:
    """Exact gradient of the episode log-probability for every parameter.

    The local and global encodings are single shared subgraphs; the history
    encoder and extractor are rebuilt per step, mirroring how the episode
    was generated.
    """
    leaves = {
        name: Tensor(arr, name=name) for name, arr in network.params.tensors.items()
    }
    total: Tensor | None = None
    if episode.steps:
        local = network.encode_local(document, leaves)
        global_ = network.encode_global(local, leaves)
        state = ExtractionState.initial(document, network.config.max_sentences)
        for step in episode.steps:
            term = network.action_log_prob(state, step.action, local, global_, leaves)
            total = term if total is None else total + term
            if not step.action.stop:
                state = state.advance(step.action.sentence_index)
    grads: GradientDict = {}
    if total is not None:
        total.backward()
    for name, leaf in leaves.items():
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        if not np.isfinite(grad).all():
            raise NumericsError(f"non-finite gradient in tensor {name}")
        grads[name] = grad
    return grads


def reinforce_update(
    params: PolicyParams,
    episode: Episode,
    gradient: GradientDict,
    learning_rate: float,
) -> PolicyParams:
    """Apply theta += alpha * R/(T+1) * gradient in place.

    A zero learning rate or zero reward leaves every tensor bit-identical.
    """
    scale = learning_rate * episode.reward / (episode.T + 1)
    if scale != 0.0:
        for name, arr in params.tensors.items():
            if arr.shape != gradient[name].shape:
                raise ValueError(f"gradient shape mismatch for tensor {name}")
            arr += (scale * gradient[name]).astype(arr.dtype)
    return params


@dataclass(frozen=True)
class EvalPoint:
    update: int
    mean_val_reward: float
    wallclock_s: float


@dataclass
class TrainResult:
    params: PolicyParams
    best_params: PolicyParams
    best_val_reward: float
    history: list[EvalPoint]
    config: PolicyConfig
    vocab: Vocab


def _mean_val_reward(
    network: PolicyNetwork, corpus: Corpus, stop_threshold: float, max_steps: int
) -> float:
    cfg = extraction.ExtractionConfig(
        stop_threshold=stop_threshold, max_summary_sentences=max_steps
    )
    total = 0.0
    for doc in corpus:
        indices = extraction.extract(network, doc, cfg)
        total += _episode_reward(doc, doc.gold_summary, indices)
    return total / len(corpus)


def _require_gold_corpus(corpus: Corpus, name: str) -> None:
    for doc in corpus:
        if doc.gold_summary is None or not doc.gold_summary.sentences:
            raise DataError(f"{name} document {doc.id!r} has no gold summary")


def train(
    train_corpus: Corpus,
    val_corpus: Corpus,
    policy_config: PolicyConfig,
    trainer_config: TrainerConfig,
    vocab: Vocab | None = None,
    out_dir: str | Path | None = None,
    labels: Mapping[str, OracleLabel] | None = None,
) -> TrainResult:
    """Run REINFORCE updates and track the best-on-validation parameters.

    Each update draws a batch of documents, picks a best-of-k episode per
    document, and applies the mean of the per-episode scaled gradients
    (accumulated in float64).  Validation reward is the mean reward of
    deterministic greedy extraction at the configured stop threshold; the
    best checkpoint is persisted whenever it improves.  If parameters go
    non-finite, training aborts and the last persisted checkpoint stands.
    """
    _require_gold_corpus(train_corpus, "train")
    _require_gold_corpus(val_corpus, "val")
    if vocab is None:
        vocab = build_vocab(train_corpus)
    if policy_config.vocab_size != len(vocab):
        policy_config = replace(policy_config, vocab_size=len(vocab))
    if trainer_config.warm_start_updates > 0 and labels is None:
        raise DataError("warm_start_updates > 0 requires oracle labels")
    rng = np.random.default_rng(trainer_config.seed)
    params = init_params(policy_config, trainer_config.seed)
    network = PolicyNetwork(policy_config, vocab, params)
    checkpoint_path = Path(out_dir) / "model.lexsum" if out_dir is not None else None

    adam_m: GradientDict = {}
    adam_v: GradientDict = {}
    adam_t = 0
    if trainer_config.optimizer == "adam":
        adam_m = {n: np.zeros(a.shape) for n, a in params.tensors.items()}
        adam_v = {n: np.zeros(a.shape) for n, a in params.tensors.items()}

    history: list[EvalPoint] = []
    best_val = float("-inf")
    best_params = params.copy()
    started = time.perf_counter()
    n_docs = len(train_corpus)
    batch = trainer_config.episodes_per_update

    def evaluate_now(update: int) -> float:
        val = _mean_val_reward(
            network, val_corpus, trainer_config.stop_threshold,
            trainer_config.max_steps,
        )
        history.append(EvalPoint(update, val, time.perf_counter() - started))
        return val

    for update in range(1, trainer_config.total_updates + 1):
        chosen = rng.choice(n_docs, size=batch, replace=batch > n_docs)
        accum: GradientDict = {
            n: np.zeros(a.shape, dtype=np.float64) for n, a in params.tensors.items()
        }
        for doc_i in chosen:
            doc = train_corpus[int(doc_i)]
            with ad.no_grad():
                cache = network.encode_document(doc)
            if (
                update <= trainer_config.warm_start_updates
                and labels is not None
                and doc.id in labels
            ):
                episode = teacher_episode(
                    network, doc, labels[doc.id], doc.gold_summary,
                    trainer_config.max_steps, cache,
                )
            else:
                episode = select_training_episode(
                    network, doc, doc.gold_summary, rng,
                    trainer_config.samples_per_document,
                    trainer_config.max_steps, cache,
                )
            scale = episode.reward / (episode.T + 1)
            if scale == 0.0:
                continue
            grads = grad_log_prob(network, doc, episode)
            for name in accum:
                accum[name] += scale * grads[name]
        for name in accum:
            accum[name] /= len(chosen)

        if trainer_config.optimizer == "sgd":
            for name, arr in params.tensors.items():
                arr += (trainer_config.learning_rate * accum[name]).astype(arr.dtype)
        else:
            adam_t += 1
            b1, b2, eps = 0.9, 0.999, 1e-8
            for name, arr in params.tensors.items():
                adam_m[name] = b1 * adam_m[name] + (1 - b1) * accum[name]
                adam_v[name] = b2 * adam_v[name] + (1 - b2) * accum[name] ** 2
                m_hat = adam_m[name] / (1 - b1**adam_t)
                v_hat = adam_v[name] / (1 - b2**adam_t)
                step = trainer_config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
                arr += step.astype(arr.dtype)

        if not params.finite():
            raise NumericsError(
                f"non-finite parameters after update {update}; "
                "the last saved checkpoint is retained"
            )

        if update % trainer_config.eval_interval == 0 or update == trainer_config.total_updates:
            val = evaluate_now(update)
            if val > best_val:
                best_val = val
                best_params = params.copy()
                if checkpoint_path is not None:
                    save_checkpoint(best_params, policy_config, vocab, checkpoint_path)
            if (
                trainer_config.early_stop_val_reward > 0
                and val >= trainer_config.early_stop_val_reward
            ):
                break

    if not history:
        best_val = evaluate_now(0)
        best_params = params.copy()
        if checkpoint_path is not None:
            save_checkpoint(best_params, policy_config, vocab, checkpoint_path)
    return TrainResult(
        params=params,
        best_params=best_params,
        best_val_reward=best_val,
        history=history,
        config=policy_config,
        vocab=vocab,
    )


def write_history_tsv(history: Sequence[EvalPoint], path: str | Path) -> None:
    """History as TSV: update index, validation reward, elapsed seconds."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("update\tmean_val_reward\twallclock_s\n")
        for point in history:
            fh.write(
                f"{point.update}\t{point.mean_val_reward:.6f}\t"
                f"{point.wallclock_s:.3f}\n"
            )


def finite_diff_check(
    network: PolicyNetwork,
    document: Document,
    gold: GoldSummary,
    epsilon: float = 1e-5,
    sample_count: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs at float64 on a fixed forced episode (selections 0..2, then stop).
    Coordinates are sampled among those whose analytic gradient is not
    negligible; near-zero coordinates are dominated by difference noise and
    are checked separately by the test suite.
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ValueError("epsilon outside the supported range [1e-6, 1e-4]")
    params64 = network.params.astype(np.float64)
    net64 = PolicyNetwork(network.config, network.vocab, params64)
    n = min(len(document.sentences), network.config.max_sentences)
    picks = list(range(min(3, n)))
    steps = [EpisodeStep(Action(stop=False, sentence_index=i), 0.0) for i in picks]
    if len(picks) < n:
        steps.append(EpisodeStep(Action(stop=True), 0.0))
    episode = Episode(doc_id=document.id, steps=tuple(steps), reward=1.0)

    analytic = grad_log_prob(net64, document, episode)
    flat_names = []
    for name, grad in analytic.items():
        threshold = 1e-4
        for idx in np.flatnonzero(np.abs(grad) >= threshold):
            flat_names.append((name, int(idx)))
    if not flat_names:
        return 0.0
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(flat_names))[: min(sample_count, len(flat_names))]

    max_rel = 0.0
    for pick in order:
        name, idx = flat_names[int(pick)]
        arr = params64.tensors[name].reshape(-1)
        orig = arr[idx]
        arr[idx] = orig + epsilon
        hi = episode_log_prob(net64, document, episode)
        arr[idx] = orig - epsilon
        lo = episode_log_prob(net64, document, episode)
        arr[idx] = orig
        numeric = (hi - lo) / (2.0 * epsilon)
        a = float(analytic[name].reshape(-1)[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric))
        max_rel = max(max_rel, rel)
    return max_rel
