"""Phase 3: majority vote over the 2*M*M suggestions per sample.

Ties on vote count fall to the class with the larger summed certainty
weight among its supporters, then to the lower class index.  The
averaged confidence always divides by 2*M*M, so disagreeing suggestions
drag it down even when the winning class is confident.
"""

import numpy as np

from .core import LabelState, ValidationError
from .propagate import NO_SUGGESTION


class VoteOutcome:
    def __init__(self, winner, vote_counts, omega_hat, tie_broken):
        self.winner = int(winner)
        self.vote_counts = np.asarray(vote_counts, dtype=np.int64)
        self.omega_hat = float(omega_hat)
        self.tie_broken = bool(tie_broken)


def decide_all(suggestions):
    """Vectorized vote over every sample.

    Returns (winners, vote_counts, omega_hat, tie_broken); winners hold
    NO_SUGGESTION where every suggestion was a sentinel, with omega_hat
    forced to 0 there.
    """
    M = suggestions.n_branches
    n = suggestions.n_samples
    C = suggestions.n_classes
    lab = suggestions.labels.transpose(2, 0, 1, 3).reshape(n, -1)
    wgt = suggestions.weights.transpose(2, 0, 1, 3).reshape(n, -1)
    counts = np.empty((n, C), dtype=np.int64)
    wsum = np.empty((n, C))
    for c in range(C):
        hit = lab == c
        counts[:, c] = hit.sum(axis=1)
        wsum[:, c] = np.where(hit, wgt, 0.0).sum(axis=1)
    top = counts.max(axis=1)
    tied = counts == top[:, None]
    tie_broken = tied.sum(axis=1) > 1
    left = np.where(tied, wsum, -1.0)
    winners = np.argmax(left == left.max(axis=1)[:, None], axis=1).astype(np.int64)
    omega_hat = wsum[np.arange(n), winners] / (2.0 * M * M)
    silent = top == 0
    winners[silent] = NO_SUGGESTION
    omega_hat[silent] = 0.0
    tie_broken[silent] = False
    return winners, counts, omega_hat, tie_broken


def majority_decision(suggestions, n):
    """Vote outcome for one sample; see decide_all for the tie rules."""
    winners, counts, omega_hat, tie_broken = decide_all(suggestions)
    return VoteOutcome(winners[n], counts[n], omega_hat[n], tie_broken[n])


def average_confidence(suggestions, winner, n, M):
    """Mean certainty of suggestions agreeing with the winner, over 2*M*M."""
    lab = suggestions.labels[:, :, n, :].ravel()
    wgt = suggestions.weights[:, :, n, :].ravel()
    return float(np.where(lab == winner, wgt, 0.0).sum() / (2.0 * M * M))


def normalize_confidence(omega_hat):
    """Min-max normalize over the dataset; a flat vector maps to all 1."""
    omega_hat = np.asarray(omega_hat, dtype=np.float64)
    if omega_hat.shape[0] < 1:
        raise ValidationError("need at least one confidence value")
    lo = omega_hat.min()
    hi = omega_hat.max()
    if hi == lo:
        return np.ones_like(omega_hat)
    return (omega_hat - lo) / (hi - lo)


def apply_correction(state, outcomes, omega_bar):
    """New LabelState with voted labels and normalized confidence.

    Samples whose every suggestion was a sentinel keep their noisy label
    and get confidence 0 regardless of the normalization.
    """
    omega_bar = np.asarray(omega_bar, dtype=np.float64)
    if len(outcomes) != state.n_samples or omega_bar.shape[0] != state.n_samples:
        raise ValidationError("outcomes must cover every sample exactly once")
    corrected = np.empty(state.n_samples, dtype=np.int64)
    confidence = omega_bar.copy()
    for i, outcome in enumerate(outcomes):
        if outcome.winner == NO_SUGGESTION:
            corrected[i] = state.noisy[i]
            confidence[i] = 0.0
        else:
            corrected[i] = outcome.winner
    return LabelState(state.noisy, corrected, confidence, state.n_classes)
