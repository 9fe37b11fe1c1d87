"""
Segmentation scoring: instance matching and per-class IoU / Dice means
"""
import numpy as np

from .geometry import mask_dice, mask_iou

UNASSIGNED_CLASS = -1


def match_instances(predictions, ground_truth):
    """Greedy one-to-one matching of predictions to GT instances

    Both arguments are lists of (class_id, mask). A prediction may match a
    GT instance of the same class, or any class when its class is -1.
    Pairs are taken by descending IoU; unmatched GT scores 0.
    Returns one record per GT instance, in GT order.
    """
    candidates = []
    for g, (g_cls, g_mask) in enumerate(ground_truth):
        for p, (p_cls, p_mask) in enumerate(predictions):
            if p_cls != g_cls and p_cls != UNASSIGNED_CLASS:
                continue
            candidates.append((-mask_iou(p_mask, g_mask), g, p))
    candidates.sort()

    records = [{'class': int(cls), 'iou': 0.0, 'dice': 0.0, 'prediction': None}
               for cls, _ in ground_truth]
    used = set()
    for neg_iou, g, p in candidates:
        if records[g]['prediction'] is not None or p in used:
            continue
        used.add(p)
        records[g]['prediction'] = p
        records[g]['iou'] = -neg_iou
        records[g]['dice'] = mask_dice(predictions[p][1], ground_truth[g][1])
    return records


def class_means(records):
    """{class: {'iou', 'dice', 'count'}} plus unweighted means over present classes"""
    per_class = {}
    for rec in records:
        per_class.setdefault(rec['class'], []).append((rec['iou'], rec['dice']))
    summary = {}
    for cls in sorted(per_class):
        scores = np.array(per_class[cls])
        summary[str(cls)] = {
            'iou': float(scores[:, 0].mean()),
            'dice': float(scores[:, 1].mean()),
            'count': len(scores)
        }
    if not summary:
        return summary, 0.0, 0.0
    miou = float(np.mean([s['iou'] for s in summary.values()]))
    mdice = float(np.mean([s['dice'] for s in summary.values()]))
    return summary, miou, mdice
