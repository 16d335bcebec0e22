"""
Naive reference implementations: full scans, breadth-first search over explicit
adjacency sets and python set algebra. Nothing here touches the grid or the
union-find code it checks, only the closed-ball tolerance is shared.
"""
from collections import deque
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np

from segerr.spatial import RADIUS_TOLERANCE_M


def squared_distances_to(positions: np.ndarray, i: int) -> np.ndarray:
    d = positions - positions[i]
    return d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2]


def naive_neighbors(positions: np.ndarray, i: int, r: float) -> Set[int]:
    positions = np.asarray(positions, dtype=np.float64)
    bound = (r + RADIUS_TOLERANCE_M) ** 2
    close = np.flatnonzero(squared_distances_to(positions, i) <= bound)
    return {int(j) for j in close if j != i}


def naive_adjacency(positions: np.ndarray, r: float) -> List[Set[int]]:
    positions = np.asarray(positions, dtype=np.float64)
    return [naive_neighbors(positions, i, r) for i in range(positions.shape[0])]


def naive_boundary(
    adjacency: List[Set[int]], labels: Sequence[int], valid: Sequence[bool]
) -> Set[int]:
    return {
        i
        for i, neighbors in enumerate(adjacency)
        if valid[i] and any(valid[j] and labels[j] != labels[i] for j in neighbors)
    }


def naive_components(
    adjacency: List[Set[int]], labels: Sequence[int], valid: Sequence[bool]
) -> List[Tuple[int, FrozenSet[int]]]:
    """(label, members) of every same-label connected component, breadth first."""
    seen = set()
    components = []
    for start in range(len(adjacency)):
        if not valid[start] or start in seen:
            continue
        members = {start}
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in adjacency[i]:
                if valid[j] and labels[j] == labels[start] and j not in members:
                    members.add(j)
                    queue.append(j)
        seen |= members
        components.append((int(labels[start]), frozenset(members)))
    return components


def naive_zone(
    adjacency: List[Set[int]], mask: Set[int], valid: Sequence[bool]
) -> Set[int]:
    """Valid points with a valid point on the other side of ``mask`` nearby."""
    return {
        i
        for i, neighbors in enumerate(adjacency)
        if valid[i]
        and any(valid[j] and ((j in mask) != (i in mask)) for j in neighbors)
    }


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


def _plurality(labels: Sequence[int]) -> int:
    counts: Dict[int, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    best = max(counts.values())
    return min(label for label, count in counts.items() if count == best)


def naive_metrics(
    positions: np.ndarray,
    gt: Sequence[int],
    pred: Sequence[int],
    num_classes: int,
    r: float,
    iou_threshold: float = 0.5,
    min_component_size: int = 50,
    ignore_label: int = -1,
    component_samples: bool = False,
) -> Dict[str, object]:
    """Every metric and counter of one scene, recomputed from scratch."""
    gt = [int(v) for v in gt]
    pred = [int(v) for v in pred]
    n = len(gt)
    valid = [g != ignore_label for g in gt]
    masked_pred = [p if valid[i] else ignore_label for i, p in enumerate(pred)]
    adjacency = naive_adjacency(positions, r)

    confusion = [[0] * num_classes for _ in range(num_classes)]
    for i in range(n):
        if valid[i]:
            confusion[gt[i]][pred[i]] += 1
    ious = []
    for c in range(num_classes):
        hits = confusion[c][c]
        union = sum(confusion[c]) + sum(row[c] for row in confusion) - hits
        ious.append(_ratio(hits, union))
    present = [v for v in ious if v is not None]
    recalls = [confusion[c][c] / sum(confusion[c]) for c in range(num_classes)
               if sum(confusion[c])]
    total = sum(map(sum, confusion))

    g_boundary = naive_boundary(adjacency, gt, valid)
    p_boundary = naive_boundary(adjacency, masked_pred, valid)

    gt_components = naive_components(adjacency, gt, valid)
    pred_components = naive_components(adjacency, masked_pred, valid)
    samples = []
    tp = qualifying = 0
    for label, members in gt_components:
        if len(members) < min_component_size:
            continue
        guess = _plurality([pred[i] for i in members])
        hit = [
            m for lab, m in pred_components if lab == guess and m & members
        ]
        union_of_hits = frozenset().union(*hit)
        iou = len(union_of_hits & members) / len(union_of_hits | members)
        if iou > iou_threshold:
            qualifying += 1
            tp += int(guess == label)
        samples.append((members, union_of_hits))

    if not component_samples:
        samples = []
        for c in range(num_classes):
            g_set = {i for i in range(n) if valid[i] and gt[i] == c}
            if g_set:
                samples.append(
                    (g_set, {i for i in range(n) if valid[i] and pred[i] == c})
                )
    num = den = 0
    for g_set, p_set in samples:
        if len(g_set & p_set) / len(g_set | p_set) <= iou_threshold:
            continue
        g_inner = naive_zone(adjacency, set(g_set), valid) & set(g_set)
        p_inner = naive_zone(adjacency, set(p_set), valid) & set(p_set)
        num += len(p_inner & g_inner)
        den += len(g_inner)

    return {
        "confusion": confusion,
        "class_iou": ious,
        "mIoU": sum(present) / len(present) if present else None,
        "mAcc": sum(recalls) / len(recalls) if recalls else None,
        "oAcc": _ratio(sum(confusion[c][c] for c in range(num_classes)), total),
        "pred_boundary": len(p_boundary),
        "gt_boundary": len(g_boundary),
        "boundary_overlap": len(p_boundary & g_boundary),
        "FErr": _ratio(len(p_boundary - g_boundary), len(p_boundary)),
        "MErr": _ratio(len(g_boundary - p_boundary), len(g_boundary)),
        "rerr_tp": tp,
        "rerr_all": qualifying,
        "RErr": _ratio(qualifying - tp, qualifying),
        "derr_num": num,
        "derr_den": den,
        "DErr": _ratio(den - num, den),
        "num_gt_components": len(gt_components),
    }


def naive_softmax_attention(query, keys, values) -> np.ndarray:
    """Scalar-loop ``softmax(q k^T / sqrt(d)) v``."""
    query, keys, values = (
        np.asarray(a, dtype=np.float64) for a in (query, keys, values)
    )
    n, d = query.shape
    out = np.zeros((n, values.shape[1]))
    for i in range(n):
        logits = [sum(query[i, c] * keys[j, c] for c in range(d)) / d**0.5
                  for j in range(keys.shape[0])]
        top = max(logits)
        weights = [np.exp(v - top) for v in logits]
        norm = sum(weights)
        for j, w in enumerate(weights):
            out[i] += (w / norm) * values[j]
    return out


def naive_dice(pred, target) -> float:
    num = den = 0.0
    for p_row, t_row in zip(np.asarray(pred).tolist(), np.asarray(target).tolist()):
        for p, t in zip(p_row, t_row):
            num += p * t
            den += p * p + t * t
    return 1.0 if den == 0 else 1 - 2 * num / den


def naive_semantic_loss(pred, target, eps: float = 1e-7) -> float:
    rows = np.asarray(pred).tolist()
    targets = np.asarray(target).tolist()
    ce = 0.0
    for p_row, t_row in zip(rows, targets):
        for p, t in zip(p_row, t_row):
            ce -= t * np.log(min(max(p, eps), 1 - eps))
    return ce / len(rows) + naive_dice(pred, target)


def naive_boundary_loss(e, eg, eps: float = 1e-7) -> float:
    e = np.asarray(e, dtype=np.float64).tolist()
    eg = np.asarray(eg, dtype=np.float64).tolist()
    bce = 0.0
    num = den = 0.0
    for score, label in zip(e, eg):
        p = min(max(score, eps), 1 - eps)
        bce -= label * np.log(p) + (1 - label) * np.log(1 - p)
        num += score * label
        den += score + label
    dice = 1.0 if den == 0 else 1 - 2 * num / den
    return bce / len(e) + dice
