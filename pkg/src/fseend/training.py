"""Training loop over in-memory corpora with optional early stopping on DER."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evalkit
from .labels import to_appearance_order
from .model import rng_stream
from .objective import Batch, LossBreakdown, make_optimizer, train_step


@dataclass
class TrainConfig:
    steps: int = 1000
    lr: float = 3e-3
    optimizer: str = "adam"
    batch_size: int | None = None  # None: every step sees the full corpus
    use_embedding_loss: bool = True
    similarity_labels: str = "extended"
    pit: bool = False
    log_every: int = 10
    eval_every: int = 0  # 0 disables DER checks during training
    target_der: float | None = None  # stop once training DER (collar 0) reaches this
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.lr < 0:
            raise ValueError("steps and lr must be non-negative")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def corpus_batch(corpus, s_max: int, index=None) -> Batch:
    """Stack equal-length recordings into one batch with extended targets."""
    items = corpus if index is None else [corpus[i] for i in index]
    lengths = {len(x) for x, _ in items}
    if len(lengths) != 1:
        raise ValueError("recordings in a batch must share their length")
    x = np.stack([np.asarray(x, dtype=np.float64) for x, _ in items])
    y = np.stack([to_appearance_order(lab, s_max).matrix for _, lab in items])
    return Batch(x, y)


def training_der(model, corpus, collar: float = 0.0) -> float:
    report = evalkit.evaluate_corpus(model, corpus, collar=collar)
    return evalkit.pool(list(report.optimal.values())).der


@dataclass
class TrainState:
    step: int = 0
    history: list[dict] = field(default_factory=list)
    reached_target_at: int | None = None


class Trainer:
    """Owns the optimizer for one model; ``run`` may be called repeatedly to continue."""

    def __init__(self, model, corpus, config: TrainConfig, log=None):
        self.model = model
        self.corpus = corpus
        self.config = config
        self.optimizer = make_optimizer(config.optimizer, config.lr)
        self.state = TrainState()
        self.log = log
        self._full = corpus_batch(corpus, model.config.s_max) if config.batch_size is None else None

    def _batch(self, step: int) -> Batch:
        if self._full is not None:
            return self._full
        # batch choice depends only on (seed, step) so a resumed run sees the same batches
        rng = rng_stream(self.config.seed, f"batch.{step}")
        idx = rng.choice(len(self.corpus), size=min(self.config.batch_size, len(self.corpus)), replace=False)
        return corpus_batch(self.corpus, self.model.config.s_max, sorted(idx))

    def step(self) -> LossBreakdown:
        cfg = self.config
        losses = train_step(
            self.model,
            self._batch(self.state.step),
            self.optimizer,
            use_embedding_loss=cfg.use_embedding_loss,
            similarity_labels=cfg.similarity_labels,
            pit=cfg.pit,
        )
        self.state.step += 1
        rec = {
            "step": self.state.step,
            "l_d": losses.l_d,
            "l_e": losses.l_e,
            "total": losses.total,
            "lr": cfg.lr,
            "seed": cfg.seed,
        }
        self.state.history.append(rec)
        if self.log is not None and (self.state.step % cfg.log_every == 0 or self.state.step == 1):
            self.log.write(json.dumps(rec) + "\n")
        return losses

    def run(self, steps: int | None = None, until: int | None = None) -> TrainState:
        """Train for ``steps`` more steps (default: up to ``config.steps`` total)."""
        cfg = self.config
        end = until if until is not None else (self.state.step + steps if steps is not None else cfg.steps)
        while self.state.step < end:
            self.step()
            if cfg.eval_every and self.state.step % cfg.eval_every == 0 and cfg.target_der is not None:
                if training_der(self.model, self.corpus) <= cfg.target_der:
                    self.state.reached_target_at = self.state.step
                    break
        return self.state

    def config_dict(self) -> dict:
        return asdict(self.config)
