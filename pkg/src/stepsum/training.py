"""Deterministic minibatch training with validation-loss model selection."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import (
    Adam,
    NonFiniteError,
    Tape,
    Tensor,
    backward,
    cross_entropy,
)
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import StepExample, Vocab
from .models import Model, batch_mean_loss, model_logits


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    steps_run: int
    best_step: int
    best_valid_loss: float
    history: list[tuple[int, float, float]] = field(default_factory=list)
    stopped_early: bool = False


def example_loss(model: Model, cfg: RunConfig, vocab: Vocab,
                 ex: StepExample) -> Tensor:
    logits = model_logits(model, cfg, vocab, ex.doc, ex.prefix)
    return cross_entropy(logits, ex.target)


def evaluate_loss(model: Model, cfg: RunConfig, vocab: Vocab,
                  examples: Sequence[StepExample]) -> float:
    total = 0.0
    for ex in examples:
        total += example_loss(model, cfg, vocab, ex).item()
    return total / max(len(examples), 1)


def next_step_accuracy(model: Model, cfg: RunConfig, vocab: Vocab,
                       examples: Sequence[StepExample]) -> float:
    hits = 0
    for ex in examples:
        logits = model_logits(model, cfg, vocab, ex.doc, ex.prefix)
        if int(np.argmax(logits.data)) == ex.target:
            hits += 1
    return hits / max(len(examples), 1)


def train(cfg: RunConfig, model: Model, vocab: Vocab,
          train_examples: Sequence[StepExample],
          valid_examples: Sequence[StepExample],
          out_dir: str | None = None,
          stop_check: Callable[[Model, int], bool] | None = None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Adam over shuffled minibatches; keeps the best-by-validation checkpoint.

    Shuffling is a seeded permutation re-drawn per epoch, so two runs with
    the same config and data produce identical loss curves. A non-finite
    loss or update aborts the run with the last written checkpoint intact.
    ``stop_check`` runs at every evaluation point and may end training early
    (used by overfitting experiments once their target accuracy is reached).
    """
    if not train_examples:
        raise ValueError("no training examples")
    rng = np.random.default_rng(cfg.seed)
    params = model.named_parameters()
    optimizer = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)

    order = rng.permutation(len(train_examples))
    cursor = 0
    best_step = 0
    best_valid = float("inf")
    history: list[tuple[int, float, float]] = []
    running_loss = 0.0
    stopped_early = False

    last_dir = os.path.join(out_dir, "last") if out_dir else None
    best_dir = os.path.join(out_dir, "best") if out_dir else None
    if last_dir:
        # a divergence abort must always leave a loadable state behind
        save_checkpoint(last_dir, params, cfg, vocab.id_to_token)

    step = 0
    try:
        for step in range(1, cfg.train_steps + 1):
            batch = []
            for _ in range(cfg.batch_size):
                if cursor >= len(order):
                    order = rng.permutation(len(train_examples))
                    cursor = 0
                batch.append(train_examples[int(order[cursor])])
                cursor += 1

            optimizer.zero_grad()
            with Tape() as tape:
                loss = batch_mean_loss(model, cfg, vocab, batch)
                backward(tape, loss)
            running_loss += loss.item()
            optimizer.step()

            if step % cfg.checkpoint_every == 0 or step == cfg.train_steps:
                train_loss = running_loss / min(step, cfg.checkpoint_every)
                running_loss = 0.0
                valid_loss = evaluate_loss(model, cfg, vocab, valid_examples)
                history.append((step, train_loss, valid_loss))
                if log:
                    log(f"step {step}: train {train_loss:.4f} valid {valid_loss:.4f}")
                if last_dir:
                    save_checkpoint(last_dir, params, cfg, vocab.id_to_token)
                if valid_loss < best_valid:
                    best_valid = valid_loss
                    best_step = step
                    if best_dir:
                        save_checkpoint(best_dir, params, cfg, vocab.id_to_token)
                if stop_check is not None and stop_check(model, step):
                    stopped_early = True
                    break
    except NonFiniteError as e:
        raise TrainingDiverged(
            f"non-finite loss or update at step {step}; "
            f"last checkpoint retained"
        ) from e

    return TrainResult(step, best_step, best_valid, history, stopped_early)
