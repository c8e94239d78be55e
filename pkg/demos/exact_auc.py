"""Rank-based AUC is exact, ties included: compare with brute-force pair counting."""
from fractions import Fraction

import numpy as np

from tempograd.evaluation import auc, auc_fraction

rng = np.random.default_rng(5)
scores = rng.integers(0, 6, size=40).astype(float)   # few distinct values, so many ties
labels = rng.integers(0, 2, size=40)

pos, neg = scores[labels == 1], scores[labels == 0]
wins = sum(Fraction(1) if p > q else Fraction(1, 2) if p == q else Fraction(0)
           for p in pos for q in neg)
print("pairs      ", len(pos) * len(neg))
print("brute force", wins / (len(pos) * len(neg)))
print("auc_fraction", auc_fraction(scores, labels))
print("auc (float)", auc(scores, labels))

# monotone rescaling changes nothing
print("after exp  ", auc_fraction(np.exp(scores), labels))
