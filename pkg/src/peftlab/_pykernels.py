"""Pure-NumPy dynamic-programming kernels.

Reference implementations of the two sequential recurrences the framework
spends its inner-loop time in: the CTC forward-backward pass and the DTW
cost accumulation. The compiled twin in ``_ckernels.pyx`` must produce the
same values; ``kernels.py`` picks whichever is importable.
"""

import numpy as np

COMPILED = False


def _extend_with_blanks(targets: np.ndarray, blank: int) -> np.ndarray:
    ext = np.full(2 * len(targets) + 1, blank, dtype=np.int64)
    ext[1::2] = targets
    return ext


def ctc_forward_backward(log_probs: np.ndarray, targets: np.ndarray, blank: int):
    """Return (loss, d loss / d log_probs) for one [T, C] utterance.

    Both recursions run in the log domain over the blank-augmented target
    l' of length S = 2|targets| + 1. State s at frame t may come from s,
    s-1, or (when l'[s] is a label differing from l'[s-2]) s-2. The loss is
    -log P(targets | log_probs); the gradient is minus the state posterior
    summed per class.
    """
    T, C = log_probs.shape
    ext = _extend_with_blanks(targets, blank)
    S = len(ext)
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    skip_idx = np.where(can_skip)[0]

    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = log_probs[0, ext[0]]
    if S > 1:
        alpha[0, 1] = log_probs[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        m = prev.copy()
        m[1:] = np.logaddexp(m[1:], prev[:-1])
        if skip_idx.size:
            m[skip_idx] = np.logaddexp(m[skip_idx], prev[skip_idx - 2])
        alpha[t] = m + log_probs[t, ext]

    if S > 1:
        total = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    else:
        total = alpha[T - 1, S - 1]

    beta = np.full((T, S), -np.inf)
    beta[T - 1, S - 1] = 0.0
    if S > 1:
        beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + log_probs[t + 1, ext]
        m = nxt.copy()
        m[:-1] = np.logaddexp(m[:-1], nxt[1:])
        if skip_idx.size:
            m[skip_idx - 2] = np.logaddexp(m[skip_idx - 2], nxt[skip_idx])
        beta[t] = m

    # state posteriors: gamma[t, s] = P(state s at frame t | targets)
    gamma = np.exp(alpha + beta - total)
    grad = np.zeros_like(log_probs)
    np.add.at(grad, (np.arange(T)[:, None], ext[None, :]), -gamma)
    return float(-total), grad


def dtw_accumulate(cost: np.ndarray) -> np.ndarray:
    """Accumulated-cost matrix for monotone DTW over a local-cost matrix.

    acc[i, j] = cost[i, j] + min(acc[i-1, j-1], acc[i, j-1], acc[i-1, j]);
    every path node contributes its local cost exactly once.
    """
    n, m = cost.shape
    acc = np.empty_like(cost)
    acc[0, 0] = cost[0, 0]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            acc[i, j] = cost[i, j] + best
    return acc
