"""Full-ranking evaluation: Recall@K, NDCG@K, and sampled-pair AUC.

Every user with test targets ranks the whole catalog minus their already
known positives (train and validation); ties break toward the smaller POI
id so runs are reproducible.  AUC draws one uniform negative per positive,
rejected against the user's full positive set, from a seed-tagged stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .counterfactual import score_candidates
from .interactions import DatasetSplit, SaturatedUser
from .propagation import FinalEmbeddings

AUC_STREAM = 41

DEFAULT_KS = (20, 40, 60)


class EmptyTestSet(ValueError):
    pass


def rank_candidates(user: int, finals: FinalEmbeddings, scorer: str,
                    exclude: np.ndarray) -> np.ndarray:
    """All POIs minus ``exclude``, best score first, ties by ascending id."""
    n_pois = finals.p.data.shape[0]
    candidates = np.setdiff1d(np.arange(n_pois), exclude)  # sorted unique
    scores = score_candidates(finals, user, candidates, scorer)
    order = np.lexsort((candidates, -scores))
    return candidates[order]


def recall_at_k(ranked: np.ndarray, positives, k: int) -> float:
    pos = set(int(p) for p in positives)
    if not pos:
        raise EmptyTestSet("no test positives for this user")
    hits = sum(1 for p in ranked[:k] if int(p) in pos)
    return hits / len(pos)


def ndcg_at_k(ranked: np.ndarray, positives, k: int) -> float:
    """Binary NDCG with the ideal DCG taken over the full positive set.

    Normalizing by the full ideal (rather than truncating it at K) keeps
    NDCG@K monotone non-decreasing in K, matching Recall@K.
    """
    pos = set(int(p) for p in positives)
    if not pos:
        raise EmptyTestSet("no test positives for this user")
    dcg = 0.0
    for rank, p in enumerate(ranked[:k], start=1):
        if int(p) in pos:
            dcg += 1.0 / np.log2(rank + 1)
    idcg = sum(1.0 / np.log2(r + 1) for r in range(1, len(pos) + 1))
    return float(dcg / idcg)


def pair_auc(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Fraction of (pos, neg) pairs ranked correctly; ties count half."""
    if len(pos_scores) == 0 or len(neg_scores) == 0:
        raise EmptyTestSet("auc needs at least one positive and one negative")
    diff = pos_scores[:, None] - neg_scores[None, :]
    wins = (diff > 0).sum() + 0.5 * (diff == 0).sum()
    return float(wins) / diff.size

def sample_auc_negatives(split: DatasetSplit, user: int, count: int,
                         seed: int) -> np.ndarray:
    """Uniform negatives, rejected against the user's full positive set."""
    positives = split.full_by_user[user]
    if len(positives) >= split.n_pois:
        raise SaturatedUser(f"user {user} interacted with every poi")
    rng = np.random.default_rng(np.random.SeedSequence([seed, AUC_STREAM, user]))
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        neg = int(rng.integers(0, split.n_pois))
        while neg in positives:
            neg = int(rng.integers(0, split.n_pois))
        out[i] = neg
    return out


@dataclass
class MetricsReport:
    """Averaged ranking metrics; ``defined`` is False when no user had
    evaluation targets (metric fields are then None)."""

    recall: dict
    ndcg: dict
    auc: float | None
    n_users_evaluated: int
    scorer: str
    target: str
    seed: int
    defined: bool
    config_hash: str | None = None

    def to_json(self) -> str:
        payload = {
            "recall": {str(k): v for k, v in self.recall.items()},
            "ndcg": {str(k): v for k, v in self.ndcg.items()},
            "auc": self.auc,
            "n_users_evaluated": self.n_users_evaluated,
            "scorer": self.scorer,
            "target": self.target,
            "seed": self.seed,
            "defined": self.defined,
            "config_hash": self.config_hash,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        raw = json.loads(text)
        return cls(recall={int(k): v for k, v in raw["recall"].items()},
                   ndcg={int(k): v for k, v in raw["ndcg"].items()},
                   auc=raw["auc"], n_users_evaluated=raw["n_users_evaluated"],
                   scorer=raw["scorer"], target=raw["target"], seed=raw["seed"],
                   defined=raw["defined"], config_hash=raw.get("config_hash"))


def evaluate(finals: FinalEmbeddings, split: DatasetSplit, scorer: str = "tie",
             target: str = "test", ks=DEFAULT_KS, seed: int = 0,
             with_auc: bool = True) -> MetricsReport:
    """Rank and score every user that has targets in the chosen split.

    target="test" excludes train+val positives from the candidate list;
    target="val" (used during training) excludes train only.
    """
    if target not in ("test", "val"):
        raise ValueError(f"target must be 'test' or 'val', got {target!r}")
    ks = tuple(ks)
    target_set = split.test if target == "test" else split.val
    users = [u for u in range(split.n_users)
             if len(target_set.user_pois(u)) > 0]
    if not users:
        return MetricsReport(recall={k: None for k in ks},
                             ndcg={k: None for k in ks}, auc=None,
                             n_users_evaluated=0, scorer=scorer, target=target,
                             seed=seed, defined=False)
    n_pois = finals.p.data.shape[0]
    all_pois = np.arange(n_pois)
    scores = np.empty((len(users), n_pois))
    for i, u in enumerate(users):
        scores[i] = score_candidates(finals, u, all_pois, scorer)
        if target == "test":
            exclude = np.concatenate([split.train.user_pois(u),
                                      split.val.user_pois(u)])
        else:
            exclude = split.train.user_pois(u)
        scores[i, exclude.astype(int)] = -np.inf
    # One stable argsort ranks every user at once.  Excluded entries sink
    # below every finite score, so each remaining candidate lands at the
    # exact position rank_candidates would give it, ties still breaking
    # toward the smaller POI id.
    order = np.argsort(-scores, axis=1, kind="stable")
    position = np.empty_like(order)
    position[np.arange(len(users))[:, None], order] = all_pois[None, :]
    recall_acc = {k: 0.0 for k in ks}
    ndcg_acc = {k: 0.0 for k in ks}
    auc_acc = 0.0
    for i, u in enumerate(users):
        targets = np.asarray(target_set.user_pois(u), dtype=int)
        ranks = np.sort(position[i, targets] + 1)
        idcg = sum(1.0 / np.log2(r + 1) for r in range(1, len(targets) + 1))
        for k in ks:
            within = ranks[ranks <= k]
            recall_acc[k] += len(within) / len(targets)
            dcg = 0.0
            for r in within:
                dcg += 1.0 / np.log2(r + 1)
            ndcg_acc[k] += dcg / idcg
        if with_auc:
            negs = sample_auc_negatives(split, u, len(targets), seed)
            pos_scores = score_candidates(finals, u, targets, scorer)
            neg_scores = score_candidates(finals, u, negs, scorer)
            auc_acc += pair_auc(pos_scores, neg_scores)
    n_eval = len(users)
    return MetricsReport(
        recall={k: recall_acc[k] / n_eval for k in ks},
        ndcg={k: ndcg_acc[k] / n_eval for k in ks},
        auc=(auc_acc / n_eval) if with_auc else None,
        n_users_evaluated=n_eval, scorer=scorer, target=target, seed=seed,
        defined=True)
