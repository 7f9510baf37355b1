"""Factorized node-to-token alignment posteriors shared by both aligners."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class AlignmentPosterior:
    """Row ``s`` is q(l_s = i | w, v) over tokens i = 1..|w| for node ``node_ids[s]``.

    The joint over all nodes is the product of rows, so MAP decoding,
    sampling, log-probabilities and entropy all work row by row.
    """

    node_ids: list[str]
    log_probs: np.ndarray
    log_marginals: np.ndarray | None = None

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        if self.log_probs.shape[0] != len(self.node_ids):
            raise ValueError("one posterior row per node required")

    @classmethod
    def from_probs(cls, node_ids, probs, log_marginals=None):
        with np.errstate(divide="ignore"):
            return cls(list(node_ids), np.log(np.asarray(probs, dtype=np.float64)), log_marginals)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def n_tokens(self) -> int:
        return self.log_probs.shape[1]

    def map_alignment(self) -> dict[str, int]:
        # np.argmax returns the first maximum: ties go to the smaller index
        return {nid: int(np.argmax(row)) + 1 for nid, row in zip(self.node_ids, self.log_probs)}

    def log_prob(self, alignment: dict[str, int]) -> float:
        return float(sum(self.log_probs[s, alignment[nid] - 1] for s, nid in enumerate(self.node_ids)))

    def sample(self, k: int, rng: np.random.Generator) -> list[tuple[dict[str, int], float]]:
        """Draw ``k`` independent joint alignments with their log q."""
        if k < 1:
            raise ValueError("k must be >= 1")
        probs = self.probs
        probs = probs / probs.sum(axis=1, keepdims=True)
        cdf = np.cumsum(probs, axis=1)
        # u >= cdf[-1] can only happen through rounding; fall back to the last supported token
        last = [int(np.flatnonzero(row > 0)[-1]) for row in probs]
        out = []
        for _ in range(k):
            u = rng.random(len(self.node_ids))
            idx = []
            for s in range(len(self.node_ids)):
                i = int(np.searchsorted(cdf[s], u[s], side="right"))
                idx.append(i if i < self.n_tokens else last[s])
            alignment = {nid: i + 1 for nid, i in zip(self.node_ids, idx)}
            out.append((alignment, float(sum(self.log_probs[s, i] for s, i in enumerate(idx)))))
        return out

    def row_entropies(self) -> np.ndarray:
        p = self.probs
        with np.errstate(invalid="ignore"):
            terms = np.where(p > 0, -p * self.log_probs, 0.0)
        return terms.sum(axis=1)

    def entropy(self) -> float:
        return float(self.row_entropies().sum())

    def to_json(self, sent_id: str) -> str:
        rows = [{"node": nid, "probs": [float(x) for x in row]} for nid, row in zip(self.node_ids, self.probs)]
        return json.dumps({"id": sent_id, "rows": rows})
