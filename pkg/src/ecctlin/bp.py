"""Flooding sum-product belief propagation on the Tanner graph."""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .codes import LLR_CLIP, ParityCheckMatrix

TANH_CLIP = 0.9999999


@dataclass
class BpResult:
    posterior: np.ndarray
    hard: np.ndarray
    converged: np.ndarray | bool
    iterations: np.ndarray | int


class _Graph:
    """Padded edge tables for vectorised message passing.

    Edge e joins check ``chk[e]`` and variable ``var[e]``. ``check_slots``
    lists the edges of each check padded with the dummy edge index E (whose
    tanh value is held at 1); ``var_slots`` does the same per variable with a
    dummy whose message is 0.
    """

    def __init__(self, pcm: ParityCheckMatrix):
        self.n, self.m = pcm.n, pcm.m
        self.chk, self.var = pcm.edges
        E = self.num_edges = self.chk.size
        self.check_slots = self._pad(self.chk, self.m, E)
        self.var_slots = self._pad(self.var, self.n, E)
        self.H = pcm.H

    @staticmethod
    def _pad(owner, count, dummy):
        order = np.argsort(owner, kind="stable")
        deg = np.bincount(owner, minlength=count)
        width = max(int(deg.max(initial=0)), 1)
        slots = np.full((count, width), dummy, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(deg)[:-1]])
        for i in range(count):
            slots[i, : deg[i]] = order[starts[i] : starts[i] + deg[i]]
        return slots


_graph_cache: "weakref.WeakKeyDictionary[ParityCheckMatrix, _Graph]" = weakref.WeakKeyDictionary()


def _graph(pcm: ParityCheckMatrix) -> _Graph:
    g = _graph_cache.get(pcm)
    if g is None:
        g = _graph_cache[pcm] = _Graph(pcm)
    return g


def _check_update(g: _Graph, v2c: np.ndarray, clip: float) -> np.ndarray:
    B = v2c.shape[0]
    t = np.ones((B, g.num_edges + 1))
    t[:, :-1] = np.tanh(v2c / 2.0)
    slots = t[:, g.check_slots]  # (B, m, dc)
    # leave-one-out product from prefix and suffix products
    ones = np.ones(slots.shape[:2] + (1,))
    prefix = np.cumprod(np.concatenate([ones, slots[..., :-1]], axis=-1), axis=-1)
    suffix = np.cumprod(np.concatenate([ones, slots[..., :0:-1]], axis=-1), axis=-1)[..., ::-1]
    extrinsic = np.clip(prefix * suffix, -TANH_CLIP, TANH_CLIP)
    c2v = np.empty((B, g.num_edges + 1))
    c2v[:, g.check_slots] = 2.0 * np.arctanh(extrinsic)
    return np.clip(c2v[:, :-1], -clip, clip)


def _variable_totals(g: _Graph, llr: np.ndarray, c2v: np.ndarray) -> np.ndarray:
    padded = np.concatenate([c2v, np.zeros((c2v.shape[0], 1))], axis=1)
    return llr + padded[:, g.var_slots].sum(axis=-1)


def _decode(pcm, llr, iters, clip, early_stop):
    g = _graph(pcm)
    llr = np.asarray(llr, dtype=np.float64)
    B = llr.shape[0]
    posterior = llr.copy()
    iterations = np.zeros(B, dtype=np.int64)
    hard = (posterior < 0).astype(np.uint8)
    converged = ~((hard.astype(np.int64) @ g.H.T) & 1).any(axis=1)
    active = ~converged if early_stop else np.ones(B, dtype=bool)

    idx = np.flatnonzero(active)
    v2c = llr[idx][:, g.var]
    for it in range(1, iters + 1):
        if idx.size == 0:
            break
        c2v = _check_update(g, v2c, clip)
        total = _variable_totals(g, llr[idx], c2v)
        v2c = np.clip(total[:, g.var] - c2v, -clip, clip)
        posterior[idx] = total
        iterations[idx] = it
        h = (total < 0).astype(np.uint8)
        hard[idx] = h
        ok = ~((h.astype(np.int64) @ g.H.T) & 1).any(axis=1)
        converged[idx] = ok
        if early_stop and ok.any():
            keep = ~ok
            idx = idx[keep]
            v2c = v2c[keep]
    return posterior, hard, converged, iterations


def bp_decode(
    pcm: ParityCheckMatrix,
    llr: np.ndarray,
    iters: int,
    *,
    clip: float = LLR_CLIP,
    early_stop: bool = True,
) -> BpResult:
    """Decode a single word of channel LLRs (positive favours bit 0).

    Returns the posterior LLRs, the hard decision (bit 1 where the posterior
    is negative), whether the hard decision satisfies every check, and the
    number of flooding rounds performed.
    """
    llr = np.asarray(llr, dtype=np.float64)
    if llr.shape != (pcm.n,):
        raise ValueError(f"expected {pcm.n} LLRs, got shape {llr.shape}")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    post, hard, conv, its = _decode(pcm, llr[None], iters, clip, early_stop)
    return BpResult(post[0], hard[0], bool(conv[0]), int(its[0]))


def bp_decode_batch(
    pcm: ParityCheckMatrix,
    llr: np.ndarray,
    iters: int,
    *,
    clip: float = LLR_CLIP,
    early_stop: bool = True,
) -> BpResult:
    """Decode a (B, n) batch; each row is decoded independently."""
    try:
        llr = np.asarray(llr, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("ragged LLR batch") from exc
    if llr.ndim != 2 or llr.shape[1] != pcm.n:
        raise ValueError(f"expected a (B, {pcm.n}) batch, got shape {llr.shape}")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    return BpResult(*_decode(pcm, llr, iters, clip, early_stop))
