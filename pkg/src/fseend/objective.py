"""Activity head, training losses and the optimizer step."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import labels as lab
from . import numerics as nx
from .numerics import GradTape, Tensor

BCE_EPS = 1e-7
NORM_TOL = 1e-6


@dataclass
class LossBreakdown:
    l_d: float
    l_e: float
    total: float
    graph: Tensor | None = field(default=None, repr=False, compare=False)


def activity(attractors: Tensor, embeddings: Tensor) -> Tensor:
    """``sigmoid(<a_{s,t}, e_t>)`` for every slot; inputs must be unit-norm."""
    a, e = nx.as_tensor(attractors), nx.as_tensor(embeddings)
    if a.shape[:-2] != e.shape[:-1] or a.shape[-1] != e.shape[-1]:
        raise ValueError(f"attractors {a.shape} and embeddings {e.shape} do not align")
    for name, t in (("attractor", a), ("embedding", e)):
        norms = np.linalg.norm(t.data, axis=-1)
        if norms.size and np.abs(norms - 1.0).max() > NORM_TOL:
            raise ValueError(f"{name} vectors must be unit-norm")
    ev = nx.reshape(e, (*e.shape[:-1], e.shape[-1], 1))
    logits = nx.matmul(a, ev)
    return nx.sigmoid(nx.reshape(logits, a.shape[:-1]))


def _check_binary(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary")
    return y.astype(np.float64)


def diarization_loss(yhat: Tensor, y: np.ndarray) -> Tensor:
    """BCE summed over slots, averaged over frames (and over the batch, if any)."""
    yhat = nx.as_tensor(yhat)
    y = _check_binary(y)
    per_frame = nx.sum_(nx.binary_cross_entropy(yhat, y, BCE_EPS), axis=-1)
    return nx.mean(per_frame)


def label_cosine(y: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity of label rows; zero rows have cosine 0 with everything."""
    y = np.asarray(y, dtype=np.float64)
    n = np.linalg.norm(y, axis=-1, keepdims=True)
    u = np.divide(y, n, out=np.zeros_like(y), where=n > 0)
    return u @ np.swapaxes(u, -1, -2)


def embedding_similarity_loss(e: Tensor, y: np.ndarray) -> Tensor:
    """Mean over all frame pairs of (embedding cosine - label cosine)^2."""
    e = nx.as_tensor(e)
    target = label_cosine(y)
    sim = nx.matmul(e, nx.transpose(e))
    diff = nx.sub(sim, target)
    return nx.mean(nx.mul(diff, diff))


def similarity_targets(y_ext: np.ndarray, mode: str = "extended") -> np.ndarray:
    """Label rows used by the similarity loss: all extended slots or speakers only."""
    if mode == "extended":
        return y_ext
    if mode == "speakers":
        return y_ext[..., 1:-1]
    raise ValueError(f"unknown similarity label mode {mode!r}")


def total_loss(
    yhat: Tensor,
    y: np.ndarray,
    e: Tensor,
    use_embedding_loss: bool = True,
    similarity_labels: str = "extended",
) -> LossBreakdown:
    l_d = diarization_loss(yhat, y)
    if use_embedding_loss:
        l_e = embedding_similarity_loss(e, similarity_targets(y, similarity_labels))
        total = nx.add(l_d, l_e)
        return LossBreakdown(l_d.item(), l_e.item(), total.item(), total)
    return LossBreakdown(l_d.item(), 0.0, l_d.item(), l_d)


def pit_permute(yhat: Tensor, y: np.ndarray) -> Tensor:
    """Reorder the speaker columns of ``yhat`` to their best BCE match in ``y``.

    Slot 0 and the termination slot stay in place. Works per recording when a
    batch axis is present.
    """
    yhat = nx.as_tensor(yhat)
    y = np.asarray(y)
    if yhat.shape != y.shape:
        raise ValueError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    S = y.shape[-1]
    flat_p = yhat.data.reshape(-1, *yhat.shape[-2:])
    flat_y = y.reshape(-1, *y.shape[-2:])
    index = np.empty((flat_p.shape[0], S), dtype=np.int64)
    for b in range(flat_p.shape[0]):
        perm, _ = lab.pit_best_permutation(flat_p[b][:, 1:-1], flat_y[b][:, 1:-1])
        index[b] = [0, *(1 + np.asarray(perm)), S - 1]
    if yhat.ndim == 2:
        return nx.getitem(yhat, (slice(None), index[0]))
    if yhat.ndim != 3:
        raise ValueError("pit_permute expects (T, S) or (B, T, S) posteriors")
    B, T, _ = yhat.shape
    key = (np.arange(B)[:, None, None], np.arange(T)[None, :, None], index[:, None, :])
    return nx.getitem(yhat, key)


def pit_diarization_loss(yhat, y) -> float:
    """Minimum over speaker-column permutations of the diarization BCE."""
    yhat = np.asarray(getattr(yhat, "data", yhat), dtype=np.float64)
    _, loss = lab.pit_best_permutation(yhat, _check_binary(y))
    return loss


# ---------------------------------------------------------------- optimization


class SGD:
    def __init__(self, lr: float):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr = lr
        self.step_count = 0

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        if self.lr == 0:
            return
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"step": np.array([self.step_count], dtype=np.float64)}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-9):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m[k] = b1 * self.m.get(k, 0.0) + (1 - b1) * g
            v = self.v[k] = b2 * self.v.get(k, 0.0) + (1 - b2) * g * g
            if self.lr == 0:
                continue
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"step": np.array([self.step_count], dtype=np.float64)}
        state.update({f"m.{k}": v for k, v in self.m.items()})
        state.update({f"v.{k}": v for k, v in self.v.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])
        self.m = {k[2:]: v for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: v for k, v in state.items() if k.startswith("v.")}


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass
class Batch:
    features: np.ndarray  # (B, T, F)
    targets: np.ndarray  # (B, T, n_slots) extended labels


def loss_on_batch(
    model,
    batch: Batch,
    params: dict[str, Tensor],
    use_embedding_loss: bool = True,
    similarity_labels: str = "extended",
    pit: bool = False,
) -> LossBreakdown:
    out = model.forward(batch.features, params)
    yhat = pit_permute(out.posteriors, batch.targets) if pit else out.posteriors
    return total_loss(yhat, batch.targets, out.embeddings, use_embedding_loss, similarity_labels)


def compute_gradients(model, batch: Batch, **loss_kw) -> tuple[LossBreakdown, dict[str, np.ndarray]]:
    params = model.tensors(requires_grad=True)
    with GradTape() as tape:
        losses = loss_on_batch(model, batch, params, **loss_kw)
    if not np.isfinite(losses.total):
        raise FloatingPointError(f"non-finite loss {losses.total}")
    tape.backward(losses.graph)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
    return losses, grads


def train_step(model, batch: Batch, optimizer, **loss_kw) -> LossBreakdown:
    """One optimizer update of ``model.params`` on ``batch``.

    A non-finite loss or gradient raises FloatingPointError and leaves the
    parameters untouched.
    """
    losses, grads = compute_gradients(model, batch, **loss_kw)
    if not all(np.isfinite(g).all() for g in grads.values()):
        raise FloatingPointError("non-finite gradient")
    optimizer.update(model.params, grads)
    return losses
