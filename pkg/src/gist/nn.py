"""Minimal dense numeric kernel.

Float64 vectors/matrices, MLPs with hand-derived backward passes, the
symmetric in-batch contrastive loss, Adam, and central-difference gradient
checking. Parameters live in flat ``dict[str, np.ndarray]`` namespaces so
optimizers, checkpoints and the gradient checker can treat every model the
same way. All ops are deterministic; randomness only enters through the
``numpy.random.Generator`` a caller passes in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

Params = dict[str, np.ndarray]

# Learnable temperatures are kept in log space and projected into this range
# after every optimizer step.
TAU_MIN = 0.01
TAU_MAX = 1.0
INIT_TAU = 0.07


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(pre: np.ndarray) -> np.ndarray:
    return (pre > 0).astype(np.float64)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


# ---------------------------------------------------------------------------
# vector ops
# ---------------------------------------------------------------------------

def l2_normalize(a: np.ndarray) -> np.ndarray:
    """Scale a vector to unit norm. Raises on the zero vector."""
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return a / norm


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization; names the first zero-norm row on failure."""
    norms = np.linalg.norm(x, axis=1)
    bad = np.nonzero(norms == 0.0)[0]
    if bad.size:
        raise ValueError(f"zero-norm embedding at row {int(bad[0])}")
    return x / norms[:, None]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two nonzero vectors, in [-1, 1]."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for a zero vector")
    return float(np.dot(a / na, b / nb))


def outer_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-major flattened outer product: element i*len(b)+j equals a[i]*b[j]."""
    return np.outer(a, b).reshape(-1)


# ---------------------------------------------------------------------------
# MLP with cached forward and analytic backward
# ---------------------------------------------------------------------------

_ACTIVATIONS = ("relu", "linear", "sigmoid")


@dataclass
class Mlp:
    """Fully connected stack; weights[i] has shape (d_in, d_out).

    ``activations[i]`` tags the nonlinearity applied after layer i and must
    be one of "relu", "linear", "sigmoid".
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    @classmethod
    def create(
        cls,
        dims: list[int],
        rng: np.random.Generator,
        hidden_activation: str = "relu",
        output_activation: str = "linear",
    ) -> "Mlp":
        """He-style init for len(dims)-1 layers, biases at zero."""
        weights, biases, acts = [], [], []
        for i in range(len(dims) - 1):
            d_in, d_out = dims[i], dims[i + 1]
            weights.append(rng.normal(0.0, np.sqrt(2.0 / d_in), (d_in, d_out)))
            biases.append(np.zeros(d_out))
            acts.append(hidden_activation if i < len(dims) - 2 else output_activation)
        return cls(weights, biases, acts)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Compute the output for a (B, in_dim) batch, caching layer inputs.

        Returns (output, cache); feed the cache to ``backward``.
        """
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(
                f"input shape {x.shape} does not match first layer ({self.in_dim})"
            )
        cache = []
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            pre = h @ w + b
            cache.append((h, pre, act))
            if act == "relu":
                h = relu(pre)
            elif act == "sigmoid":
                h = sigmoid(pre)
            elif act == "linear":
                h = pre
            else:
                raise ValueError(f"unknown activation {act!r}")
        return h, cache

    def backward(
        self, cache: list, d_out: np.ndarray
    ) -> tuple[np.ndarray, list[tuple[np.ndarray, np.ndarray]]]:
        """Backprop d_out through the cached forward pass.

        Returns (d_input, [(dW, db) per layer]).
        """
        layer_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)
        g = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            h, pre, act = cache[i]
            if act == "relu":
                g = g * relu_grad(pre)
            elif act == "sigmoid":
                s = sigmoid(pre)
                g = g * s * (1.0 - s)
            dw = h.T @ g
            db = g.sum(axis=0)
            layer_grads[i] = (dw, db)
            g = g @ self.weights[i].T
        return g, layer_grads

    def param_items(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        items = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            items.append((f"{prefix}.w{i}", w))
            items.append((f"{prefix}.b{i}", b))
        return items

    def grad_items(
        self, prefix: str, layer_grads: list[tuple[np.ndarray, np.ndarray]]
    ) -> list[tuple[str, np.ndarray]]:
        items = []
        for i, (dw, db) in enumerate(layer_grads):
            items.append((f"{prefix}.w{i}", dw))
            items.append((f"{prefix}.b{i}", db))
        return items


def mlp_forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Functional alias for Mlp.forward."""
    return mlp.forward(x)


def accumulate(grads: Params, items) -> None:
    """Add (name, array) pairs into a gradient dict, summing repeats."""
    for name, g in items:
        if name in grads:
            grads[name] += g
        else:
            grads[name] = np.array(g, dtype=np.float64, copy=True)


# ---------------------------------------------------------------------------
# contrastive loss
# ---------------------------------------------------------------------------

def info_nce(
    left: np.ndarray, right: np.ndarray, log_tau: float
) -> tuple[float, np.ndarray, np.ndarray, float]:
    """Symmetric in-batch contrastive loss on cosine similarity.

    Row i of ``left`` is paired with row i of ``right``; every other row in
    the batch is a negative. Each side's loss is the mean over rows of
    -log softmax(S/tau) at the paired entry, and the total is the mean of
    the two sides. A batch of one row has no negatives and scores exactly 0.

    Returns (loss, d_left, d_right, d_log_tau). Gradients are with respect
    to the raw (unnormalized) embeddings and the log-temperature.
    """
    if left.shape != right.shape:
        raise ValueError(f"view shapes differ: {left.shape} vs {right.shape}")
    n = left.shape[0]
    if n < 1:
        raise ValueError("empty batch")
    tau = float(np.exp(log_tau))

    ln = np.linalg.norm(left, axis=1)
    rn = np.linalg.norm(right, axis=1)
    for side, norms in (("left", ln), ("right", rn)):
        bad = np.nonzero(norms == 0.0)[0]
        if bad.size:
            raise ValueError(f"zero-norm embedding at {side} row {int(bad[0])}")
    lhat = left / ln[:, None]
    rhat = right / rn[:, None]

    s = (lhat @ rhat.T) / tau  # (n, n)
    idx = np.arange(n)

    # left-to-right: softmax over each row; right-to-left: over each column.
    shift_r = s - s.max(axis=1, keepdims=True)
    lse_r = np.log(np.exp(shift_r).sum(axis=1)) + s.max(axis=1)
    shift_c = s - s.max(axis=0, keepdims=True)
    lse_c = np.log(np.exp(shift_c).sum(axis=0)) + s.max(axis=0)
    loss_l = float(np.mean(lse_r - s[idx, idx]))
    loss_r = float(np.mean(lse_c - s[idx, idx]))
    loss = 0.5 * (loss_l + loss_r)

    p_row = softmax(s, axis=1)
    p_col = softmax(s, axis=0)
    ds = 0.5 * (p_row + p_col) / n
    ds[idx, idx] -= 1.0 / n

    d_lhat = (ds @ rhat) / tau
    d_rhat = (ds.T @ lhat) / tau
    # d log(tau) = -sum(ds * s): S scales as 1/tau, and d tau/d log tau = tau.
    d_log_tau = -float(np.sum(ds * s))

    # back through row normalization: d x = (g - (g.xhat) xhat) / |x|
    d_left = (d_lhat - (d_lhat * lhat).sum(axis=1, keepdims=True) * lhat) / ln[:, None]
    d_right = (d_rhat - (d_rhat * rhat).sum(axis=1, keepdims=True) * rhat) / rn[:, None]
    return loss, d_left, d_right, d_log_tau


def clamp_log_tau(params: Params, key: str) -> None:
    """Project a learned log-temperature back into [TAU_MIN, TAU_MAX]."""
    np.clip(params[key], np.log(TAU_MIN), np.log(TAU_MAX), out=params[key])


# ---------------------------------------------------------------------------
# binary cross-entropy on logits
# ---------------------------------------------------------------------------

def bce_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy from raw logits.

    Returns (loss, d_logits); uses the softplus form so large |logit| stays
    finite.
    """
    n = logits.shape[0]
    loss = float(np.mean(np.logaddexp(0.0, logits) - labels * logits))
    d_logits = (sigmoid(logits) - labels) / n
    return loss, d_logits


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class Adam:
    """Standard Adam over a flat parameter dict; updates arrays in place."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)


def adam_step(params: Params, grads: Params, state: Adam) -> Adam:
    """One optimizer step (see Adam.step); returns the mutated state."""
    state.step(params, grads)
    return state


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def grad_check(loss_fn, params: Params, epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` takes no arguments, reads ``params``, and returns
    (loss, grads_dict). Every entry of every parameter array is perturbed
    in place by +/- epsilon, so this is O(#params) loss evaluations each way.
    """
    _, grads = loss_fn()
    worst = 0.0
    for name, p in params.items():
        analytic = grads.get(name)
        if analytic is None:
            analytic = np.zeros_like(p)
        flat = p.reshape(-1)
        aflat = np.asarray(analytic).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up, _ = loss_fn()
            flat[i] = orig - epsilon
            down, _ = loss_fn()
            flat[i] = orig
            fd = (up - down) / (2.0 * epsilon)
            denom = max(abs(aflat[i]), abs(fd), 1e-8)
            worst = max(worst, abs(aflat[i] - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_params(directory: str | Path, params: Params) -> None:
    """Write one text file per parameter group.

    Line 1: ``<name> <ndim> <shape...>``, then values at 17 significant
    digits (one row per line), which round-trips float64 exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in params.items():
        a = np.asarray(arr, dtype=np.float64)
        lines = [" ".join([name, str(a.ndim)] + [str(d) for d in a.shape])]
        rows = a.reshape(1, -1) if a.ndim < 2 else a
        for row in rows:
            lines.append(" ".join(f"{v:.17g}" for v in np.atleast_1d(row)))
        (directory / f"{name}.txt").write_text("\n".join(lines) + "\n")


def load_params(directory: str | Path) -> Params:
    """Load a checkpoint directory written by save_params."""
    directory = Path(directory)
    params: Params = {}
    for path in sorted(directory.glob("*.txt")):
        lines = path.read_text().splitlines()
        head = lines[0].split()
        name, ndim = head[0], int(head[1])
        shape = tuple(int(d) for d in head[2 : 2 + ndim])
        values = np.array(
            [float(v) for line in lines[1:] for v in line.split()], dtype=np.float64
        )
        params[name] = values.reshape(shape)
    return params
