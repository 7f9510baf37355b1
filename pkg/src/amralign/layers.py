"""Recurrent layers and frozen character-feature token embeddings."""

from __future__ import annotations

import zlib

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor


class CharFeatureEmbedder:
    """Deterministic, frozen embeddings from hashed character trigrams.

    A word is lowercased, padded as ``<word>``, and its trigram counts (plus
    one whole-word feature) are hashed into ``buckets`` bins and projected
    by a fixed Gaussian matrix, then L2-normalized. Words present in an
    optional external ``table`` use that vector instead.
    """

    def __init__(self, dim: int, buckets: int = 4096, seed: int = 1234, table: dict | None = None):
        self.dim = dim
        self.buckets = buckets
        self.projection = np.random.default_rng(seed).normal(0.0, 1.0, size=(buckets, dim))
        self.table = {}
        for word, vec in (table or {}).items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (dim,):
                raise ValueError(f"embedding for {word!r} has shape {vec.shape}, expected ({dim},)")
            self.table[word] = vec
        self._cache: dict[str, np.ndarray] = {}

    def features(self, word: str) -> dict[int, float]:
        w = word.lower()
        padded = f"<{w}>"
        feats: dict[int, float] = {}
        grams = [padded[i:i + 3] for i in range(max(1, len(padded) - 2))]
        grams.append("#" + w)
        for g in grams:
            b = zlib.crc32(g.encode("utf-8")) % self.buckets
            feats[b] = feats.get(b, 0.0) + 1.0
        return feats

    def __call__(self, word: str) -> np.ndarray:
        vec = self._cache.get(word)
        if vec is None:
            if word in self.table:
                vec = self.table[word]
            else:
                feats = self.features(word)
                idx = np.fromiter(feats.keys(), dtype=np.int64)
                cnt = np.fromiter(feats.values(), dtype=np.float64)
                vec = cnt @ self.projection[idx]
                vec = vec / np.linalg.norm(vec)
            self._cache[word] = vec
        return vec

    def matrix(self, words) -> np.ndarray:
        return np.stack([self(w) for w in words]) if words else np.zeros((0, self.dim))


def load_embedding_table(path) -> dict[str, np.ndarray]:
    """Read ``word v1 v2 ...`` lines (word2vec/GloVe text format)."""
    table = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            table[parts[0]] = np.array([float(x) for x in parts[1:]])
    return table


class LSTM:
    """Single-layer LSTM; gate order (input, forget, output, candidate).

    Weights are uniform(-0.1, 0.1); the forget-gate bias starts at 1.0.
    """

    def __init__(self, store: ParamStore, prefix: str, input_size: int, hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.input_size = input_size
        self.Wx = store.add(f"{prefix}.Wx", ad.init_uniform(rng, (input_size, 4 * hidden)))
        self.Wh = store.add(f"{prefix}.Wh", ad.init_uniform(rng, (hidden, 4 * hidden)))
        bias = ad.init_uniform(rng, (4 * hidden,))
        bias[hidden:2 * hidden] = 1.0
        self.b = store.add(f"{prefix}.b", bias)

    def initial_state(self):
        zeros = Tensor(np.zeros((1, self.hidden)))
        return zeros, zeros

    def step(self, x_proj: Tensor, state):
        """One step given the precomputed input projection ``x @ Wx`` (1, 4H)."""
        h, c = state
        H = self.hidden
        z = x_proj + h @ self.Wh + self.b
        gates = ad.sigmoid(z[:, :3 * H])
        cand = ad.tanh(z[:, 3 * H:])
        i, f, o = gates[:, :H], gates[:, H:2 * H], gates[:, 2 * H:]
        c = f * c + i * cand
        h = o * ad.tanh(c)
        return h, c

    def run(self, xs: Tensor, reverse: bool = False) -> Tensor:
        """Run over rows of ``xs`` (T, input); returns hidden states (T, H) in input order."""
        proj = xs @ self.Wx
        T = xs.shape[0]
        state = self.initial_state()
        outs = [None] * T
        steps = range(T - 1, -1, -1) if reverse else range(T)
        for t in steps:
            state = self.step(proj[t:t + 1], state)
            outs[t] = state[0]
        return ad.concat(outs, axis=0)


class BiLSTM:
    def __init__(self, store: ParamStore, prefix: str, input_size: int, hidden: int, rng: np.random.Generator):
        self.fwd = LSTM(store, f"{prefix}.fwd", input_size, hidden, rng)
        self.bwd = LSTM(store, f"{prefix}.bwd", input_size, hidden, rng)

    def run(self, xs: Tensor) -> Tensor:
        """(T, input) -> (T, 2H): forward and backward states concatenated."""
        return ad.concat([self.fwd.run(xs), self.bwd.run(xs, reverse=True)], axis=1)
