"""Gradient producers and the sign-only update planner.

Three rules are implemented for bias-free ReLU layers:

* layer-wise backpropagation (softmax + cross-entropy head),
* supervised Forward-Forward (SFF): two passes per example, one with the
  true label token appended to the features and one with a wrong token; the
  layer pushes the goodness g = eta * ||h||^2 of positive examples above a
  threshold and of negative examples below one,
* competitive forward (CF): a single pass through layers whose units are
  partitioned into per-class clusters; the target cluster's goodness is
  pushed one way and the complement's the other way.

All gradients here are the exact analytic gradients of the corresponding
batch-mean losses (verified against finite differences), so a float
optimizer can follow them directly.  The hardware path only consumes their
signs: `threshold_sign_plan` turns a gradient into at most one single-pulse
action per weight.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .crossbar import Polarity, UpdatePlan

__all__ = [
    "LayerSpec",
    "SFFParams",
    "CFParams",
    "GradientBatch",
    "goodness",
    "build_pos_neg",
    "sff_loss",
    "sff_batch_loss",
    "sff_gradient",
    "cluster_mask",
    "cluster_labels",
    "cf_loss",
    "cf_batch_loss",
    "cf_gradient",
    "softmax",
    "cross_entropy_loss",
    "bp_gradients",
    "threshold_sign_plan",
    "sign_descent_step_float",
    "dump_gradient_csv",
]

_EXP_CLIP = 700.0   # exp() overflow guard; saturated terms are exactly 0/inf anyway


@dataclass
class LayerSpec:
    """Shape and rule metadata of one layer."""

    n_in: int
    n_out: int
    activation: str = "relu"          # "relu" | "identity"
    eta: float = 1.0                  # goodness sign, +1 or -1
    clusters: tuple[int, int] | None = None   # (n_classes, cluster_size)

    def __post_init__(self):
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.eta not in (1.0, -1.0, 1, -1):
            raise ValueError("eta must be +1 or -1")
        if self.clusters is not None:
            n_classes, size = self.clusters
            if n_classes * size != self.n_out:
                raise ValueError(
                    f"clusters {n_classes}x{size} do not tile {self.n_out} outputs")


@dataclass
class SFFParams:
    theta_plus: float = 2.0
    theta_minus: float = 1.0
    eta: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.theta_plus) and np.isfinite(self.theta_minus)):
            raise ValueError("theta offsets must be finite")
        if self.eta not in (1.0, -1.0, 1, -1):
            raise ValueError("eta must be +1 or -1")


@dataclass
class CFParams:
    variant: str = "temperature"   # "temperature" | "offset"
    theta_plus: float = 0.15
    theta_minus: float = 0.15
    eta: float = 1.0

    def __post_init__(self):
        if self.variant not in ("temperature", "offset"):
            raise ValueError(f"unknown CF variant {self.variant!r}")
        if self.variant == "temperature" and (self.theta_plus == 0 or self.theta_minus == 0):
            raise ValueError("temperature variant needs non-zero thetas")
        if self.eta not in (1.0, -1.0, 1, -1):
            raise ValueError("eta must be +1 or -1")


@dataclass
class GradientBatch:
    """Gradient of a batch-mean loss plus per-sample diagnostics."""

    grad: np.ndarray                  # (n_out, n_in)
    batch_size: int
    d_pos: np.ndarray | None = None   # per-sample positive-term weights D+
    d_neg: np.ndarray | None = None
    goodness_pos: np.ndarray | None = None
    goodness_neg: np.ndarray | None = None
    buffered_scalars: int = 0         # working-memory cost of the rule


def goodness(h, eta: float) -> float:
    """Layer goodness: eta * sum of squared activations."""
    h = np.asarray(h, dtype=float)
    return float(eta * np.sum(h * h))


def build_pos_neg(x, y: int, n_classes: int, token_amplitude: float = 1.0,
                  rng: np.random.Generator | None = None):
    """Append label tokens: the true one-hot for x_pos, a random wrong one for x_neg.

    Returns (x_pos, x_neg, wrong_label).
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if not 0 <= y < n_classes:
        raise ValueError(f"label {y} outside [0, {n_classes})")
    if rng is None:
        rng = np.random.default_rng()
    if token_amplitude == 0.0:
        warnings.warn("token_amplitude is 0: positive and negative examples coincide")
    x = np.asarray(x, dtype=float)
    wrong = int((y + rng.integers(1, n_classes)) % n_classes)
    x_pos = np.concatenate([x, np.zeros(n_classes)])
    x_neg = np.concatenate([x, np.zeros(n_classes)])
    x_pos[len(x) + y] = token_amplitude
    x_neg[len(x) + wrong] = token_amplitude
    return x_pos, x_neg, wrong


def _softplus(z):
    # log(1 + e^z), stable for large |z|
    return np.logaddexp(0.0, z)


def _sff_margins(g_pos, g_neg, params: SFFParams, n_h: int):
    a_pos = g_pos - params.eta * params.theta_plus * n_h
    a_neg = g_neg - params.eta * params.theta_minus * n_h
    return a_pos, a_neg


def sff_loss(h_pos, h_neg, params: SFFParams, n_h: int) -> float:
    """Per-example SFF loss.

    -1/2 [log sigma(g(h+) - eta theta+ N_h) + log(1 - sigma(g(h-) - eta theta- N_h))],
    evaluated through softplus for numerical stability.
    """
    h_pos = np.asarray(h_pos, dtype=float)
    h_neg = np.asarray(h_neg, dtype=float)
    if h_pos.shape != (n_h,) or h_neg.shape != (n_h,):
        raise ValueError("activation length mismatch")
    a_pos, a_neg = _sff_margins(goodness(h_pos, params.eta),
                                goodness(h_neg, params.eta), params, n_h)
    return float(0.5 * (_softplus(-a_pos) + _softplus(a_neg)))


def sff_batch_loss(h_pos, h_neg, params: SFFParams) -> float:
    """Mean SFF loss over a batch of activations, shapes (N, n_h)."""
    h_pos = np.atleast_2d(np.asarray(h_pos, dtype=float))
    h_neg = np.atleast_2d(np.asarray(h_neg, dtype=float))
    n_h = h_pos.shape[1]
    g_pos = params.eta * np.sum(h_pos ** 2, axis=1)
    g_neg = params.eta * np.sum(h_neg ** 2, axis=1)
    a_pos, a_neg = _sff_margins(g_pos, g_neg, params, n_h)
    return float(np.mean(0.5 * (_softplus(-a_pos) + _softplus(a_neg))))


def sff_gradient(x_pos, h_pos, x_neg, h_neg, params: SFFParams) -> GradientBatch:
    """Exact gradient of the batch-mean SFF loss for a ReLU layer.

    grad_ij = -sum_n [h+_{n,i} x+_{n,j} / D+_n  -  h-_{n,i} x-_{n,j} / D-_n]
    with D+_n = N_B (1 + exp(a+_n)) / eta and D-_n = N_B (1 + exp(-a-_n)) / eta.
    ReLU gating is implicit: gated units have h = 0 and contribute nothing.
    """
    x_pos = np.atleast_2d(np.asarray(x_pos, dtype=float))
    x_neg = np.atleast_2d(np.asarray(x_neg, dtype=float))
    h_pos = np.atleast_2d(np.asarray(h_pos, dtype=float))
    h_neg = np.atleast_2d(np.asarray(h_neg, dtype=float))
    n_b, n_x = x_pos.shape
    n_h = h_pos.shape[1]
    if x_neg.shape != (n_b, n_x) or h_pos.shape != (n_b, n_h) or h_neg.shape != (n_b, n_h):
        raise ValueError("batch shape mismatch")
    g_pos = params.eta * np.sum(h_pos ** 2, axis=1)
    g_neg = params.eta * np.sum(h_neg ** 2, axis=1)
    a_pos, a_neg = _sff_margins(g_pos, g_neg, params, n_h)
    d_pos = n_b * (1.0 + np.exp(np.clip(a_pos, -_EXP_CLIP, _EXP_CLIP))) / params.eta
    d_neg = n_b * (1.0 + np.exp(np.clip(-a_neg, -_EXP_CLIP, _EXP_CLIP))) / params.eta
    grad = -((h_pos / d_pos[:, None]).T @ x_pos - (h_neg / d_neg[:, None]).T @ x_neg)
    return GradientBatch(grad=grad, batch_size=n_b, d_pos=d_pos, d_neg=d_neg,
                         goodness_pos=g_pos, goodness_neg=g_neg,
                         buffered_scalars=n_b * (2 + 2 * n_x + 2 * n_h))


def cluster_labels(spec: LayerSpec) -> np.ndarray:
    """Class id C(i) of every output unit."""
    if spec.clusters is None:
        raise ValueError("layer has no cluster structure")
    n_classes, size = spec.clusters
    return np.repeat(np.arange(n_classes), size)


def cluster_mask(spec: LayerSpec, y: int) -> np.ndarray:
    """Binary mask over outputs selecting the cluster of class y."""
    if spec.clusters is None:
        raise ValueError("layer has no cluster structure")
    n_classes, size = spec.clusters
    if not 0 <= y < n_classes:
        raise ValueError(f"label {y} outside [0, {n_classes})")
    z = np.zeros(spec.n_out)
    z[y * size:(y + 1) * size] = 1.0
    return z


def _cf_margins(g_target, g_rest, params: CFParams):
    if params.variant == "temperature":
        return params.theta_plus * g_target, params.theta_minus * g_rest
    return g_target - params.eta * params.theta_plus, g_rest - params.eta * params.theta_minus


def cf_loss(h, z, params: CFParams) -> float:
    """Per-example competitive-forward loss for a masked cluster layer."""
    h = np.asarray(h, dtype=float)
    z = np.asarray(z, dtype=float)
    if h.shape != z.shape:
        raise ValueError("mask length mismatch")
    g_target = goodness(h * z, params.eta)
    g_rest = goodness(h * (1.0 - z), params.eta)
    a_pos, a_neg = _cf_margins(g_target, g_rest, params)
    return float(0.5 * (_softplus(-a_pos) + _softplus(a_neg)))


def cf_batch_loss(h, z, params: CFParams) -> float:
    """Mean CF loss over a batch; h and z shaped (N, n_h)."""
    h = np.atleast_2d(np.asarray(h, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    g_target = params.eta * np.sum((h * z) ** 2, axis=1)
    g_rest = params.eta * np.sum((h * (1.0 - z)) ** 2, axis=1)
    a_pos, a_neg = _cf_margins(g_target, g_rest, params)
    return float(np.mean(0.5 * (_softplus(-a_pos) + _softplus(a_neg))))


def cf_gradient(x, h, y, params: CFParams, spec: LayerSpec) -> GradientBatch:
    """Exact gradient of the batch-mean CF loss for a ReLU cluster layer.

    grad_ij = -sum_n h_{n,i} x_{n,j} [ delta(C(i)=Y_n)/D+_n - delta(C(i)!=Y_n)/D-_n ];
    each output row uses exactly one branch per sample.  Works for both the
    temperature and the offset variant (they differ in the margin definition
    and in whether theta multiplies the branch weight).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    h = np.atleast_2d(np.asarray(h, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=int))
    n_b, n_x = x.shape
    n_h = h.shape[1]
    if h.shape[0] != n_b or y.shape != (n_b,) or n_h != spec.n_out:
        raise ValueError("batch shape mismatch")
    cls = cluster_labels(spec)
    z = (cls[None, :] == y[:, None]).astype(float)      # (N, n_h)
    g_target = params.eta * np.sum((h * z) ** 2, axis=1)
    g_rest = params.eta * np.sum((h * (1.0 - z)) ** 2, axis=1)
    a_pos, a_neg = _cf_margins(g_target, g_rest, params)
    gain_pos = params.eta * (params.theta_plus if params.variant == "temperature" else 1.0)
    gain_neg = params.eta * (params.theta_minus if params.variant == "temperature" else 1.0)
    d_pos = n_b * (1.0 + np.exp(np.clip(a_pos, -_EXP_CLIP, _EXP_CLIP))) / gain_pos
    d_neg = n_b * (1.0 + np.exp(np.clip(-a_neg, -_EXP_CLIP, _EXP_CLIP))) / gain_neg
    coef = z / d_pos[:, None] - (1.0 - z) / d_neg[:, None]
    grad = -(h * coef).T @ x
    return GradientBatch(grad=grad, batch_size=n_b, d_pos=d_pos, d_neg=d_neg,
                         goodness_pos=g_target, goodness_neg=g_rest,
                         buffered_scalars=n_b * (3 + n_x + n_h))


def softmax(z):
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(logits, y) -> float:
    """Mean softmax cross-entropy; logits (N, C), labels (N,)."""
    logits = np.atleast_2d(np.asarray(logits, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=int))
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=1))
    return float(np.mean(log_z - shifted[np.arange(len(y)), y]))


def bp_gradients(weights: list[np.ndarray], x, y,
                 trainable: list[bool] | None = None) -> list[GradientBatch]:
    """Analytic softmax cross-entropy gradients for a 1- or 2-layer bias-free net.

    Hidden layers are ReLU, the output layer is linear.  Frozen layers (per
    the trainable mask) get a zero gradient.
    """
    if len(weights) not in (1, 2):
        raise ValueError("bp_gradients supports 1- or 2-layer networks")
    if trainable is None:
        trainable = [True] * len(weights)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=int))
    n_b = len(x)
    acts = [x]
    for k, w in enumerate(weights):
        pre = acts[-1] @ w.T
        acts.append(np.maximum(pre, 0.0) if k < len(weights) - 1 else pre)
    delta = softmax(acts[-1])
    delta[np.arange(n_b), y] -= 1.0
    delta /= n_b
    grads: list[GradientBatch] = [None] * len(weights)  # type: ignore[list-item]
    for k in range(len(weights) - 1, -1, -1):
        g = delta.T @ acts[k]
        grads[k] = GradientBatch(grad=g if trainable[k] else np.zeros_like(g),
                                 batch_size=n_b)
        if k > 0:
            delta = (delta @ weights[k]) * (acts[k] > 0)
    return grads


def threshold_sign_plan(grad, tau: float, mode: str = "descent") -> UpdatePlan:
    """Turn a gradient matrix into single-pulse actions.

    An entry gets an action only when |grad| strictly exceeds tau.  In
    descent mode the pulse moves the weight along -sign(grad): grad > tau
    pulses G+ (weight down), grad < -tau pulses G- (weight up).  The
    "paper_literal" mode swaps the mapping ("a positive gradient pulses the
    negative device"), which reads the triggering signal as the update
    -dL/dw rather than the derivative; see the planner docs.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if mode not in ("descent", "paper_literal"):
        raise ValueError(f"unknown plan mode {mode!r}")
    grad = np.atleast_2d(np.asarray(grad, dtype=float))
    up, down = Polarity.PULSE_MINUS, Polarity.PULSE_PLUS
    if mode == "paper_literal":
        up, down = down, up
    plan = UpdatePlan()
    ii, jj = np.nonzero(np.abs(grad) > tau)
    for i, j in zip(ii.tolist(), jj.tolist()):
        plan.add(i, j, down if grad[i, j] > 0 else up)
    return plan


def sign_descent_step_float(w, grad, lr: float, tau: float = 0.0) -> np.ndarray:
    """Floating-point twin of the pulse rule: w - lr * sign(grad) * [|grad| > tau]."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    w = np.asarray(w, dtype=float)
    grad = np.asarray(grad, dtype=float)
    return w - lr * np.sign(grad) * (np.abs(grad) > tau)


def dump_gradient_csv(grad, layer: int, path, append: bool = False):
    """Debug dump of a gradient matrix as `layer,i,j,grad` rows."""
    import csv

    grad = np.atleast_2d(np.asarray(grad, dtype=float))
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.writer(f)
        if not append:
            w.writerow(["layer", "i", "j", "grad"])
        for i in range(grad.shape[0]):
            for j in range(grad.shape[1]):
                w.writerow([layer, i, j, f"{grad[i, j]:.9g}"])
