"""AUC and experiment reports."""
from __future__ import annotations

import json
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .tgraph import NodeTable


class UndefinedMetricError(ValueError):
    """AUC needs at least one positive and one negative example."""


def _check(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"{len(scores)} scores but {len(labels)} labels")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC undefined with {n_pos} positives and {n_neg} negatives")
    return scores, labels == 1, n_pos, n_neg


def auc_fraction(scores, labels) -> Fraction:
    """Exact Mann-Whitney AUC as a rational number.

    Tied scores share their average rank, which credits each tied
    positive/negative pair with one half. Twice the average rank is an integer,
    so the rank sum is exact in integer arithmetic.
    """
    scores, pos, n_pos, n_neg = _check(scores, labels)
    twice_ranks = (2 * rankdata(scores, method="average")).round().astype(np.int64)
    twice_u = int(twice_ranks[pos].sum()) - n_pos * (n_pos + 1)
    return Fraction(twice_u, 2 * n_pos * n_neg)


def auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    return float(auc_fraction(scores, labels))


def split_auc(scores, node_table: NodeTable, split: str) -> float:
    ids = node_table.ids(split)
    return auc(np.asarray(scores)[ids], node_table.labels[ids])


def evaluate(decoder, embeddings, node_table: NodeTable) -> dict:
    """Valid and test AUC of ``decoder`` over labeled nodes of each split.

    ``decoder`` is any callable mapping an (N, d) array to N scores.
    """
    scores = np.asarray(decoder(np.asarray(embeddings)), dtype=np.float64).reshape(-1)
    return {
        "valid_auc": split_auc(scores, node_table, "valid"),
        "test_auc": split_auc(scores, node_table, "test"),
    }


def write_report(report: dict, model: str, json_path=None, tsv_path=None) -> None:
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump({"model": model, **report}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if tsv_path is not None:
        with open(tsv_path, "w", encoding="utf-8") as fh:
            fh.write(tsv_line(model, report) + "\n")


def tsv_line(model: str, report: dict) -> str:
    return f"{model}\t{report['valid_auc']:.4f}\t{report['test_auc']:.4f}"
