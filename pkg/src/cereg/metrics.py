"""Group-structured evaluation metrics and model-selection criteria."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# cells where the label agrees with the spurious attribute value
MAJORITY_CELLS = ((0, 0), (1, 1))
THRESHOLD = 0.5  # fixed decision threshold everywhere


def kappa_of(labels: np.ndarray, spurious: np.ndarray) -> float:
    """Fraction of examples whose label equals the spurious attribute value."""
    labels = np.asarray(labels)
    return float(np.mean(labels == np.asarray(spurious)))


def accuracy_score(preds: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.asarray(preds) == np.asarray(labels)))


@dataclass(frozen=True)
class GroupReport:
    acc_majority: float
    acc_minority: float
    acc_average: float
    acc_worst: float
    cell_acc: dict
    cell_n: dict
    empty_cells: tuple

    def as_dict(self) -> dict:
        return {
            "acc_majority": self.acc_majority, "acc_minority": self.acc_minority,
            "acc_average": self.acc_average, "acc_worst": self.acc_worst,
        }


def group_report(labels: np.ndarray, spurious: np.ndarray, probs: np.ndarray) -> GroupReport:
    """Accuracies over the four (label, spurious) cells.

    Majority/minority accuracies pool their two cells; the average is their
    unweighted mean; the worst is the minimum over non-empty cells. Empty
    cells are reported, never silently averaged in.
    """
    labels = np.asarray(labels)
    spurious = np.asarray(spurious)
    preds = (np.asarray(probs) >= THRESHOLD).astype(int)
    correct = preds == labels
    cell_acc, cell_n, empty = {}, {}, []
    for y in (0, 1):
        for a in (0, 1):
            mask = (labels == y) & (spurious == a)
            n = int(mask.sum())
            cell_n[(y, a)] = n
            if n == 0:
                empty.append((y, a))
                cell_acc[(y, a)] = float("nan")
            else:
                cell_acc[(y, a)] = float(correct[mask].mean())
    maj_mask = labels == spurious
    acc_maj = float(correct[maj_mask].mean()) if maj_mask.any() else float("nan")
    acc_min = float(correct[~maj_mask].mean()) if (~maj_mask).any() else float("nan")
    acc_avg = (acc_maj + acc_min) / 2.0
    finite = [v for v in cell_acc.values() if not np.isnan(v)]
    acc_worst = min(finite) if finite else float("nan")
    return GroupReport(acc_maj, acc_min, acc_avg, acc_worst, cell_acc, cell_n, tuple(empty))


def delta_prob(probs: np.ndarray, cf_probs: np.ndarray) -> float:
    """Mean absolute prediction shift under a counterfactual attribute flip."""
    return float(np.mean(np.abs(np.asarray(probs) - np.asarray(cf_probs))))


def crit_accuracy(val_accuracy: float) -> float:
    """Plain validation-accuracy criterion (higher is better)."""
    return val_accuracy


def crit_spurious_known(acc_majority: float, acc_minority: float, dprob: float) -> float:
    """(maj + min + (1 - delta_prob)) / 3, for when the spurious attribute is known."""
    return (acc_majority + acc_minority + (1.0 - dprob)) / 3.0


def pick_best(entries: list[dict], score_key: str) -> dict:
    """argmax of entries[score_key]; ties prefer smaller reg strength, then
    earlier epoch. Entries missing 'R' or 'epoch' tie-break as zero."""
    def order(e):
        return (-e[score_key], e.get("R", 0.0), e.get("epoch", 0))
    return min(entries, key=order)
