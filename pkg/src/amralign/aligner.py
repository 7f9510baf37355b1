"""Hard-attention sequence-to-sequence aligner.

The sentence is encoded by a BiLSTM, the linearized tree by a
unidirectional LSTM decoder, and each node's probability is marginalized
exactly over which token it is aligned to::

    q(v_s | v_<s, w) = sum_i prior(l_s = i) * emission(v_s | l_s = i)

with a bilinear attention prior and a softmax emission whose output layer
is tied to the frozen token embeddings. The decoder never conditions on
alignments, so the posterior over a whole alignment is a product of
per-node rows.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .graph import AmrGraph, CorpusEntry, LinearizedTree, Sentence, graph_to_tree, linearize
from .layers import LSTM, BiLSTM, CharFeatureEmbedder
from .posterior import AlignmentPosterior

log = logging.getLogger(__name__)

UNK = "<unk>"
BOS = "<bos>"


class TrainingDivergence(RuntimeError):
    pass


@dataclass
class AlignerConfig:
    """Defaults follow the published aligner; see :meth:`desk` for toy runs."""

    hidden: int = 200
    emb_dim: int = 64
    dropout: float = 0.1
    lr: float = 1e-4
    batch_size: int = 32
    accum_steps: int = 4
    epochs: int = 200
    seed: int = 0
    contextual_emission: bool = False
    prior_warmup_epochs: int = 0

    @classmethod
    def desk(cls, **overrides) -> "AlignerConfig":
        """Small settings that train a toy corpus in minutes on one core."""
        cfg = cls(hidden=32, emb_dim=64, dropout=0.1, lr=5e-3, batch_size=8, accum_steps=1, epochs=30,
                  prior_warmup_epochs=5)
        for k, v in overrides.items():
            setattr(cfg, k, v)
        return cfg


class NeuralAligner:
    def __init__(self, config: AlignerConfig, labels, embedder: CharFeatureEmbedder | None = None):
        self.config = config
        self.labels = [UNK] + sorted(set(labels) - {UNK})
        self.label_index = {y: k for k, y in enumerate(self.labels)}
        self.embedder = embedder or CharFeatureEmbedder(config.emb_dim)
        if self.embedder.dim != config.emb_dim:
            raise ValueError("embedder dimension does not match config.emb_dim")
        H, E = config.hidden, config.emb_dim
        rng = np.random.default_rng(config.seed)
        self.params = ParamStore()
        p = self.params
        self.encoder = BiLSTM(p, "enc", E, H, rng)
        self.decoder = LSTM(p, "dec", E, H, rng)
        self.dec_proj = p.add("prior.proj", ad.init_uniform(rng, (H, 2 * H)))
        self.W = p.add("prior.W", ad.init_uniform(rng, (2 * H, 2 * H)))
        self.U_dec = p.add("emit.U_dec", ad.init_uniform(rng, (H, E)))
        if config.contextual_emission:
            self.U_enc = p.add("emit.U_enc", ad.init_uniform(rng, (2 * H, E)))
        # direct path from the token's own embedding into the tied output layer
        self.U_tok = p.add("emit.U_tok", np.eye(E))
        self.b = p.add("emit.b", np.zeros(len(self.labels)))
        out = self.embedder.matrix(self.labels)
        out[0] = 0.0
        # tied, frozen output layer: (E, V)
        self.out_emb = out.T.copy()

    # -- scoring ---------------------------------------------------------------

    def label_ids(self, lin: LinearizedTree) -> np.ndarray:
        return np.array([self.label_index.get(lin.tokens[pos - 1], 0) for pos, _ in lin.node_positions])

    def scores(self, w: Sentence, lin: LinearizedTree, rng: np.random.Generator | None = None, train=False,
               uniform_prior=False):
        """Return ``(log_prior, log_emission)``, both (S, |w|) tensors.

        With ``uniform_prior`` the attention prior is replaced by 1/|w|,
        which turns the model into a neural IBM Model 1.
        """
        p_drop = self.config.dropout
        xs = Tensor(self.embedder.matrix(list(w.tokens)))
        xs = ad.dropout(xs, p_drop, rng, train)
        h_w = ad.dropout(self.encoder.run(xs), p_drop, rng, train)

        dec_in = Tensor(self.embedder.matrix([BOS] + list(lin.tokens[:-1])))
        dec_in = ad.dropout(dec_in, p_drop, rng, train)
        h_dec = self.decoder.run(dec_in)
        # state after consuming the token just before each node label
        rows = np.array([pos - 1 for pos, _ in lin.node_positions])
        h_v = ad.dropout(h_dec[rows], p_drop, rng, train)

        S, n = len(rows), len(w)
        if uniform_prior:
            log_prior = Tensor(np.full((S, n), -np.log(n)))
        else:
            alpha = (h_v @ self.dec_proj) @ self.W @ ad.transpose(h_w)
            log_prior = ad.log_softmax(alpha, axis=1)

        a = ad.reshape(h_v @ self.U_dec, (S, 1, -1))
        local = xs @ self.U_tok
        if self.config.contextual_emission:
            local = local + h_w @ self.U_enc
        c = ad.reshape(local, (1, n, -1))
        logits = (a + c) @ self.out_emb + self.b
        log_emit_all = ad.log_softmax(logits, axis=-1)
        y = self.label_ids(lin)
        log_emit = log_emit_all[(np.arange(S)[:, None], np.arange(n)[None, :], y[:, None])]
        return log_prior, log_emit

    def sequence_log_likelihood(self, w: Sentence, lin: LinearizedTree, rng=None, train=False,
                                uniform_prior=False) -> Tensor:
        log_prior, log_emit = self.scores(w, lin, rng, train, uniform_prior)
        return ad.logsumexp(log_prior + log_emit, axis=1).sum()

    def posterior(self, w: Sentence, g: AmrGraph) -> AlignmentPosterior:
        lin = linearize(graph_to_tree(g))
        with ad.no_dropout():
            log_prior, log_emit = self.scores(w, lin)
        joint = log_prior.data + log_emit.data
        marg = ad._lse(joint, 1)
        return AlignmentPosterior(lin.node_ids, joint - marg, marg[:, 0])

    # -- persistence -------------------------------------------------------------

    def save(self, path) -> None:
        self.params.save(path, {"kind": "neural-aligner", "config": asdict(self.config), "labels": self.labels})

    @classmethod
    def load(cls, path, embedder=None) -> "NeuralAligner":
        tensors, meta = ad.load_tensors(path)
        if meta.get("kind") != "neural-aligner":
            raise ValueError(f"{path} is not a neural aligner checkpoint")
        model = cls(AlignerConfig(**meta["config"]), meta["labels"], embedder)
        model.params.load_values(tensors)
        return model


# -- functional surface ---------------------------------------------------------

def sequence_log_likelihood(model: NeuralAligner, w: Sentence, lin: LinearizedTree) -> float:
    with ad.no_dropout():
        return model.sequence_log_likelihood(w, lin).item()


def posterior_matrix(model: NeuralAligner, w: Sentence, g: AmrGraph) -> AlignmentPosterior:
    return model.posterior(w, g)


def map_align(model: NeuralAligner, w: Sentence, g: AmrGraph) -> dict[str, int]:
    return model.posterior(w, g).map_alignment()


def sample_alignments(model: NeuralAligner, w: Sentence, g: AmrGraph, k: int, rng: np.random.Generator):
    return model.posterior(w, g).sample(k, rng)


def train(corpus: list[CorpusEntry], config: AlignerConfig, embedder=None, log_fn=None) -> NeuralAligner:
    """Maximize the summed node log-likelihood with Adam; returns the final model.

    ``log_fn(epoch, mean_nll)`` is called after every epoch. During the
    first ``prior_warmup_epochs`` epochs the prior is held uniform, so the
    emission has to explain labels from co-occurrence alone before the
    contextual prior can start memorizing positions (the usual Model 1
    initialization of richer aligners).
    """
    if not corpus:
        raise ValueError("empty corpus")
    labels = {n.label for e in corpus for n in e.graph.nodes}
    model = NeuralAligner(config, labels, embedder)
    data = [(e.sentence, linearize(graph_to_tree(e.graph))) for e in corpus]
    rng = np.random.default_rng(config.seed + 1)
    history = []
    batch_id = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        warm = epoch <= config.prior_warmup_epochs
        total = 0.0
        model.params.zero_grad()
        pending = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            batch_id += 1
            loss = None
            for k in batch:
                w, lin = data[k]
                ll = model.sequence_log_likelihood(w, lin, rng, train=True, uniform_prior=warm)
                loss = ll if loss is None else loss + ll
            scale = -1.0 / (len(batch) * config.accum_steps)
            try:
                ad.backward(loss * scale)
            except FloatingPointError as exc:
                raise TrainingDivergence(f"divergence in batch {batch_id} (epoch {epoch}): {exc}") from exc
            total -= loss.item()
            pending += 1
            if pending == config.accum_steps:
                ad.adam_step(model.params, config.lr)
                model.params.zero_grad()
                pending = 0
        if pending:
            ad.adam_step(model.params, config.lr)
            model.params.zero_grad()
        mean_nll = total / len(data)
        history.append(mean_nll)
        log.debug("aligner epoch %d nll %.4f", epoch, mean_nll)
        if log_fn is not None:
            log_fn(epoch, mean_nll)
    model.loss_history = history
    return model


def alignment_accuracy(model_or_align, entries) -> float:
    """Fraction of nodes whose predicted token equals the gold token."""
    correct = total = 0
    for e in entries:
        pred = model_or_align(e)
        for nid, tok in e.gold_alignment.items():
            total += 1
            correct += pred[nid] == tok
    return correct / total
