"""Minibatch optimal-transport pairing via the Hungarian algorithm."""

from __future__ import annotations

import numpy as np


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost assignment of an n x n matrix, O(n^3).

    Returns `assign` with assign[i] = column matched to row i. Classic
    potentials (Jonker-Volgenant style) formulation.
    """
    cost = np.asarray(cost, dtype=float)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("cost matrix must be square")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[col] = row (1-based), 0 = free
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = np.inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    assign = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        assign[match[j] - 1] = j - 1
    return assign


def ot_pair_assignment(noise: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Permutation sigma matching noise i to action sigma[i].

    Cost is the squared Euclidean distance between flattened chunks; the
    returned assignment minimizes the total pairing cost.
    """
    noise = np.asarray(noise, dtype=float).reshape(noise.shape[0], -1)
    actions = np.asarray(actions, dtype=float).reshape(actions.shape[0], -1)
    if noise.shape[0] != actions.shape[0]:
        raise ValueError("noise and action batches must have equal size")
    if noise.shape[0] == 1:
        return np.array([0])
    diff = noise[:, None, :] - actions[None, :, :]
    cost = np.einsum("ijk,ijk->ij", diff, diff)
    return hungarian(cost)
