"""Surrogate branch classifiers and their weighted training losses.

Each branch is a small linear-ReLU-linear-softmax network; the hidden
affine layer doubles as the feature embedding that the graphs are built
from.  Three losses drive training: confidence-weighted cross entropy on
corrected labels, complementary-weighted cross entropy on the original
noisy labels, and a graph smoothness penalty pulling the RBF kernel of
cross-class softmax outputs toward zero.  All parameters of a model live
in one flat vector; the layer matrices are reshaped views into it.
"""

import numpy as np

from .core import (
    TrainingError,
    ValidationError,
    load_model_vector,
    save_model_vector,
)

EPS = 1e-12


class TrainConfig:
    def __init__(
        self,
        learning_rate=0.01,
        momentum=0.9,
        lr_decay=0.1,
        lr_decay_every=5,
        epochs=15,
        batch_size=64,
        l2_weight=5e-3,
        hidden_width=64,
        alpha_smooth=1.0,
        pair_sample_count=256,
    ):
        values = dict(
            learning_rate=learning_rate,
            momentum=momentum,
            lr_decay=lr_decay,
            lr_decay_every=lr_decay_every,
            epochs=epochs,
            batch_size=batch_size,
            l2_weight=l2_weight,
            hidden_width=hidden_width,
            alpha_smooth=alpha_smooth,
            pair_sample_count=pair_sample_count,
        )
        for name, v in values.items():
            if v <= 0 and name != "l2_weight" and name != "momentum":
                raise ValidationError("%s must be positive" % name)
        if momentum < 0 or l2_weight < 0:
            raise ValidationError("momentum and l2_weight must be nonnegative")
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.lr_decay = float(lr_decay)
        self.lr_decay_every = int(lr_decay_every)
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.l2_weight = float(l2_weight)
        self.hidden_width = int(hidden_width)
        self.alpha_smooth = float(alpha_smooth)
        self.pair_sample_count = int(pair_sample_count)


class BranchModel:
    """Flat parameter vector with named views for each layer."""

    def __init__(self, dim, hidden, n_classes, theta=None):
        self.dim = int(dim)
        self.hidden = int(hidden)
        self.n_classes = int(n_classes)
        size = dim * hidden + hidden + hidden * n_classes + n_classes
        if theta is None:
            theta = np.zeros(size)
        else:
            theta = np.ascontiguousarray(theta, dtype=np.float64)
            if theta.shape != (size,):
                raise ValidationError(
                    "parameter vector has %d entries, model needs %d"
                    % (theta.size, size)
                )
        self.theta = theta
        o = 0
        self.w_embed = theta[o:o + dim * hidden].reshape(dim, hidden)
        o += dim * hidden
        self.b_embed = theta[o:o + hidden]
        o += hidden
        self.w_head = theta[o:o + hidden * n_classes].reshape(hidden, n_classes)
        o += hidden * n_classes
        self.b_head = theta[o:o + n_classes]
        self.velocity = np.zeros(size)

    def clone(self):
        return BranchModel(self.dim, self.hidden, self.n_classes, self.theta.copy())


class ModelSet:
    """The M ensemble branches plus the noisy and corrected branches."""

    def __init__(self, ensemble, noisy, corrected):
        self.ensemble = list(ensemble)
        self.noisy = noisy
        self.corrected = corrected


def init_model(dim, hidden, n_classes, rng):
    """He-style initialization; biases start at zero."""
    model = BranchModel(dim, hidden, n_classes)
    model.w_embed[:] = rng.normal(0.0, np.sqrt(2.0 / dim), (dim, hidden))
    model.w_head[:] = rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, n_classes))
    return model


def forward(model, X):
    """Return (hidden, probs): the embedding rows and softmax outputs."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise ValidationError("input rows must have dimension %d" % model.dim)
    hidden = X @ model.w_embed + model.b_embed
    logits = np.maximum(hidden, 0.0) @ model.w_head + model.b_head
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    return hidden, probs


def loss_pseudo(probs, corrected, omega_bar):
    """Confidence-weighted cross entropy against corrected labels."""
    p = np.maximum(probs[np.arange(len(corrected)), corrected], EPS)
    return float(-(np.asarray(omega_bar) * np.log(p)).sum())


def loss_noisy(probs, noisy, corrected, omega_bar):
    """Cross entropy on original labels, weighted by agreement.

    Samples whose label survived correction weigh omega_bar; corrected
    samples weigh the complement.
    """
    omega_bar = np.asarray(omega_bar, dtype=np.float64)
    w = np.where(np.asarray(noisy) == np.asarray(corrected), omega_bar, 1.0 - omega_bar)
    p = np.maximum(probs[np.arange(len(noisy)), noisy], EPS)
    return float(-(w * np.log(p)).sum())


def _pair_terms(ps, pt, ws, wt, alpha):
    diff = ps - pt
    dist = np.linalg.norm(diff, axis=1)
    coef = np.sqrt(ws * wt) * np.exp(-alpha * dist)
    # the norm is not differentiable at 0; identical outputs contribute
    # a flat maximum there, so the gradient is defined as 0
    live = dist > 1e-12
    scale = np.where(live, -alpha * coef / np.where(live, dist, 1.0), 0.0)
    return float(coef.sum()), scale[:, None] * diff


def loss_graph_smooth(prob_pairs, alpha_smooth):
    """RBF smoothness penalty over cross-class sample pairs.

    prob_pairs is an iterable of (p_s, p_t, omega_s, omega_t) tuples with
    p_* softmax rows from the branch owning each sample.
    """
    total = 0.0
    for ps, pt, ws, wt in prob_pairs:
        diff = np.asarray(ps, dtype=np.float64) - np.asarray(pt, dtype=np.float64)
        total += np.sqrt(ws * wt) * np.exp(-alpha_smooth * np.linalg.norm(diff))
    return float(total)


def loss_total(l_graph, l_pseudo, l_noisy):
    """Plain sum of the three components."""
    return float(l_graph) + float(l_pseudo) + float(l_noisy)


def _softmax_backward(probs, dprobs):
    inner = (dprobs * probs).sum(axis=1, keepdims=True)
    return probs * (dprobs - inner)


def _backprop(model, X, hidden, dlogits):
    act = np.maximum(hidden, 0.0)
    grad = np.empty_like(model.theta)
    view = BranchModel(model.dim, model.hidden, model.n_classes, grad)
    view.w_head[:] = act.T @ dlogits
    view.b_head[:] = dlogits.sum(axis=0)
    dact = dlogits @ model.w_head.T
    dhid = dact * (hidden > 0)
    view.w_embed[:] = X.T @ dhid
    view.b_embed[:] = dhid.sum(axis=0)
    return grad


def grad_pseudo(model, X, corrected, omega_bar):
    """Loss and flat analytic gradient of loss_pseudo."""
    X = np.asarray(X, dtype=np.float64)
    hidden, probs = forward(model, X)
    loss = loss_pseudo(probs, corrected, omega_bar)
    hot = np.zeros_like(probs)
    hot[np.arange(len(corrected)), corrected] = 1.0
    dlogits = np.asarray(omega_bar)[:, None] * (probs - hot)
    return loss, _backprop(model, X, hidden, dlogits)


def grad_noisy(model, X, noisy, corrected, omega_bar):
    """Loss and flat analytic gradient of loss_noisy."""
    X = np.asarray(X, dtype=np.float64)
    hidden, probs = forward(model, X)
    loss = loss_noisy(probs, noisy, corrected, omega_bar)
    omega_bar = np.asarray(omega_bar, dtype=np.float64)
    w = np.where(np.asarray(noisy) == np.asarray(corrected), omega_bar, 1.0 - omega_bar)
    hot = np.zeros_like(probs)
    hot[np.arange(len(noisy)), noisy] = 1.0
    dlogits = w[:, None] * (probs - hot)
    return loss, _backprop(model, X, hidden, dlogits)


def pair_prob_grads(probs, s_pos, t_pos, ws, wt, alpha):
    """Smoothness loss over index pairs plus its gradient in prob space."""
    loss, g = _pair_terms(probs[s_pos], probs[t_pos], ws, wt, alpha)
    dprobs = np.zeros_like(probs)
    np.add.at(dprobs, s_pos, g)
    np.add.at(dprobs, t_pos, -g)
    return loss, dprobs


def grad_graph_smooth(model, X, s_idx, t_idx, ws, wt, alpha):
    """Loss and flat gradient of the smoothness penalty on one model."""
    X = np.asarray(X, dtype=np.float64)
    hidden, probs = forward(model, X)
    loss, dprobs = pair_prob_grads(probs, s_idx, t_idx, ws, wt, alpha)
    dlogits = _softmax_backward(probs, dprobs)
    return loss, _backprop(model, X, hidden, dlogits)


def sgd_step(model, grad, lr, momentum, l2_weight):
    """One momentum SGD update with L2 regularization."""
    if not np.isfinite(grad).all():
        raise TrainingError("non-finite gradient")
    g = grad + l2_weight * model.theta
    model.velocity *= momentum
    model.velocity += g
    model.theta -= lr * model.velocity


def _check_loss(value, role, step):
    if not np.isfinite(value):
        raise TrainingError("non-finite %s loss at step %d" % (role, step))


def train_epoch(models, assignment, features, state, cfg, rng, epoch=1):
    """One pass of minibatch SGD over every branch role.

    The corrected branch trains on the full data with the pseudo-label
    loss, the noisy branch on the full data with the noisy-label loss.
    Ensemble branches walk their own subsets in lockstep; at each step
    the smoothness loss is evaluated on cross-class pairs sampled from
    the union of the live minibatches (only samples whose label survived
    correction), and during epoch 1 each ensemble branch additionally
    takes a plain cross-entropy term on its subset to bootstrap its
    embedding.
    """
    X = features.data.astype(np.float64)
    n = state.n_samples
    M = len(models.ensemble)
    bs = cfg.batch_size
    lr = cfg.learning_rate * cfg.lr_decay ** ((epoch - 1) // cfg.lr_decay_every)
    eligible = state.noisy == state.corrected

    order_corrected = rng.permutation(n)
    order_noisy = rng.permutation(n)
    subset_orders = []
    for m in range(M):
        members = assignment.members_of(m)
        subset_orders.append(members[rng.permutation(members.shape[0])])

    steps = (n + bs - 1) // bs
    for step in range(steps):
        lo, hi = step * bs, (step + 1) * bs

        batch = order_corrected[lo:hi]
        loss, grad = grad_pseudo(
            models.corrected, X[batch], state.corrected[batch], state.confidence[batch]
        )
        _check_loss(loss, "corrected-branch", step)
        sgd_step(models.corrected, grad / batch.shape[0], lr, cfg.momentum, cfg.l2_weight)

        batch = order_noisy[lo:hi]
        loss, grad = grad_noisy(
            models.noisy,
            X[batch],
            state.noisy[batch],
            state.corrected[batch],
            state.confidence[batch],
        )
        _check_loss(loss, "noisy-branch", step)
        sgd_step(models.noisy, grad / batch.shape[0], lr, cfg.momentum, cfg.l2_weight)

        live = [(m, subset_orders[m][lo:hi]) for m in range(M)]
        live = [(m, b) for m, b in live if b.shape[0] > 0]
        if not live:
            continue
        outputs = []
        for m, b in live:
            hidden, probs = forward(models.ensemble[m], X[b])
            outputs.append((m, b, hidden, probs))
        union = np.concatenate([b for _, b in live])
        probs_union = np.vstack([probs for _, _, _, probs in outputs])
        dprobs_union, pair_loss = _sample_pair_grads(
            union, probs_union, state, eligible, cfg, rng
        )
        _check_loss(pair_loss, "smoothness", step)
        offset = 0
        for m, b, hidden, probs in outputs:
            dprobs = dprobs_union[offset:offset + b.shape[0]]
            offset += b.shape[0]
            dlogits = _softmax_backward(probs, dprobs)
            grad = _backprop(models.ensemble[m], X[b], hidden, dlogits)
            if epoch == 1:
                warm_loss, warm = grad_pseudo(
                    models.ensemble[m],
                    X[b],
                    state.corrected[b],
                    np.ones(b.shape[0]),
                )
                _check_loss(warm_loss, "warm-up", step)
                grad = grad + warm / b.shape[0]
            sgd_step(models.ensemble[m], grad, lr, cfg.momentum, cfg.l2_weight)
    return models


def _sample_pair_grads(union, probs_union, state, eligible, cfg, rng):
    """Sample cross-class pairs inside the live minibatch union."""
    ok = np.flatnonzero(eligible[union])
    dprobs = np.zeros_like(probs_union)
    if ok.shape[0] < 2:
        return dprobs, 0.0
    classes = state.corrected[union[ok]]
    if (classes == classes[0]).all():
        return dprobs, 0.0
    count = cfg.pair_sample_count
    s = ok[rng.integers(ok.shape[0], size=count)]
    t = ok[rng.integers(ok.shape[0], size=count)]
    cross = state.corrected[union[s]] != state.corrected[union[t]]
    s, t = s[cross], t[cross]
    if s.shape[0] == 0:
        return dprobs, 0.0
    w = state.confidence[union]
    loss, dprobs = pair_prob_grads(
        probs_union, s, t, w[s], w[t], cfg.alpha_smooth
    )
    k = s.shape[0]
    return dprobs / k, loss / k


def save_model(path, model):
    save_model_vector(path, model.theta, model.dim, model.hidden, model.n_classes)


def load_model(path):
    theta, dim, hidden, n_classes = load_model_vector(path)
    return BranchModel(dim, hidden, n_classes, theta)
