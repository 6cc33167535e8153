"""Counterfactual scoring: strip the rank boost a POI gets from geography.

A candidate's factual score fuses its overall match y_up with a geographical
gate tanh(y_ug).  Ranking by that score rewards venues that merely sit where
the user already goes.  The debiased score subtracts the counterfactual
world where the POI carries no characteristics of its own (its match score
replaced by the user's reference score over the whole catalog), keeping the
geographical gate:

    tie = y_up * tanh(y_ug) - y_up_ref * tanh(y_ug)
        = (y_up - y_up_ref) * tanh(y_ug)

The total-effect variant keeps the factual fusion and subtracts the fully
averaged world, whose gate tanh(0) kills the term, so te == y_fused and TE
ranking equals factual-fusion ranking.

All functions here are plain numpy over final embeddings; they accept
scalars or aligned arrays and are used at inference time only (training
scores candidates through the autodiff path).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .propagation import FinalEmbeddings

SCORERS = ("tie", "te", "y_up")


@dataclass
class ScoreBundle:
    """Factual, counterfactual, and effect scores for user-POI pairs.

    Fields are scalars for a single pair or aligned arrays for a batch of
    candidates of one user.
    """

    y_up: np.ndarray     # fused match score
    y_ug: np.ndarray     # geographical-chunk match score
    y_up_ref: np.ndarray  # user's catalog-average match score
    y_fused: np.ndarray  # y_up gated by geography
    tie: np.ndarray      # debiased prediction
    te: np.ndarray       # total effect (equals y_fused, see module docstring)
    nde: np.ndarray      # the geographical-only share removed by tie


def score_match(u: np.ndarray, p: np.ndarray) -> float:
    return float(np.dot(u, p))


def score_geo(u_g: np.ndarray, p_g: np.ndarray) -> float:
    return float(np.dot(u_g, p_g))


def reference_score(u: np.ndarray, all_pois: np.ndarray) -> float:
    """Average match over the whole catalog: u . mean(p)."""
    return float(np.dot(u, all_pois.mean(axis=0)))


def fuse(y_up, y_ug):
    return y_up * np.tanh(y_ug)


def bundle_scores(y_up, y_ug, y_up_ref) -> ScoreBundle:
    y_fused = fuse(y_up, y_ug)
    nde = fuse(y_up_ref, y_ug)  # minus the tanh(0) world, which is zero
    return ScoreBundle(
        y_up=y_up, y_ug=y_ug, y_up_ref=y_up_ref,
        y_fused=y_fused,
        tie=y_fused - nde,
        te=y_fused,
        nde=nde,
    )


def tie_score(u_index: int, p_index: int, finals: FinalEmbeddings,
              y_up_ref: float) -> ScoreBundle:
    """Debiased score of one pair; the bundle carries all components."""
    u = finals.u.data[u_index]
    p = finals.p.data[p_index]
    y_up = score_match(u, p)
    y_ug = score_geo(finals.u_g.data[u_index], finals.p_g.data[p_index])
    return bundle_scores(y_up, y_ug, y_up_ref)


def te_score(u_index: int, p_index: int, finals: FinalEmbeddings) -> float:
    """Total effect: the factual fused score (the reference world gates to 0)."""
    y_up = score_match(finals.u.data[u_index], finals.p.data[p_index])
    y_ug = score_geo(finals.u_g.data[u_index], finals.p_g.data[p_index])
    return float(fuse(y_up, y_ug))


def user_reference(finals: FinalEmbeddings, u_index: int) -> float:
    return reference_score(finals.u.data[u_index], finals.p.data)


def score_candidates(finals: FinalEmbeddings, u_index: int,
                     candidates: np.ndarray, scorer: str) -> np.ndarray:
    """Vectorized scores of one user's candidate POIs under a scorer."""
    if scorer not in SCORERS:
        raise ValueError(f"unknown scorer {scorer!r}, expected one of {SCORERS}")
    u = finals.u.data[u_index]
    y_up = finals.p.data[candidates] @ u
    if scorer == "y_up":
        return y_up
    u_g = finals.u_g.data[u_index]
    y_ug = finals.p_g.data[candidates] @ u_g
    if scorer == "te":
        return fuse(y_up, y_ug)
    y_up_ref = user_reference(finals, u_index)
    return fuse(y_up, y_ug) - fuse(y_up_ref, y_ug)
