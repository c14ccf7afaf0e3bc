#!/usr/bin/env python3
"""Reference evaluator for detection corpora.

Plain-Python scalar arithmetic with no shared code, used to produce the
committed golden report that the Rust evaluator must reproduce byte-for-byte.

    python3 scripts/eval_oracle.py CORPUS LABELMAP [--iou 0.5] [--conf 0.25] [--out PATH]
"""

import argparse
import json
import sys


def project(label, coarse, mapping):
    if label in mapping:
        return mapping[label]
    if label in coarse:
        return label
    return None


def iou(a, b):
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def rank_key(pred, index):
    b = pred["box"]
    return (-pred["confidence"], pred["label"], b[0], b[1], b[2], b[3], index)


def match(preds, gts, threshold):
    """Returns the set of prediction indices that are true positives."""
    order = sorted(range(len(preds)), key=lambda i: rank_key(preds[i], i))
    used = [False] * len(gts)
    hits = set()
    for i in order:
        best, best_iou = None, None
        for j, g in enumerate(gts):
            if used[j] or g["label"] != preds[i]["label"]:
                continue
            v = iou(preds[i]["box"], g["box"])
            if v >= threshold and (best_iou is None or v > best_iou):
                best, best_iou = j, v
        if best is not None:
            used[best] = True
            hits.add(i)
    return hits


def prf(tp, fp, fn):
    if tp + fp == 0:
        p = 1.0 if tp + fn == 0 else 0.0
    else:
        p = tp / (tp + fp)
    r = 1.0 if tp + fn == 0 else tp / (tp + fn)
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def average_precision(flags, total_gt):
    if total_gt == 0:
        return None
    recall, precision = [], []
    tp = 0
    for k, hit in enumerate(flags, start=1):
        tp += 1 if hit else 0
        recall.append(tp / total_gt)
        precision.append(tp / k)
    area = 0.0
    prev_recall = 0.0
    for k in range(len(flags)):
        envelope = max(precision[k:])
        area += (recall[k] - prev_recall) * envelope
        prev_recall = recall[k]
    return area


def median(values):
    s = sorted(values)
    n = len(s)
    if n % 2:
        return s[n // 2]
    return (s[n // 2 - 1] + s[n // 2]) / 2


def evaluate(records, labelmap, iou_threshold, conf_threshold):
    coarse = set(labelmap["coarse_vocabulary"])
    mapping = labelmap["mapping"]
    images = []
    for rec in records:
        preds = []
        for p in rec.get("predictions", []):
            lab = project(p["label"], coarse, mapping)
            if lab is not None:
                preds.append({"label": lab, "box": p["box"], "confidence": p["confidence"]})
        gts = []
        for g in rec.get("ground_truth", []):
            lab = project(g["label"], coarse, mapping)
            if lab is not None:
                gts.append({"label": lab, "box": g["box"]})
        images.append((rec["image_id"], preds, gts, rec.get("detect_seconds")))
    images.sort(key=lambda t: t[0])

    counts = {}
    ranked = {}
    support = {}
    for image_id, preds, gts, _ in images:
        kept = [p for p in preds if p["confidence"] >= conf_threshold]
        hits = match(kept, gts, iou_threshold)
        matched_gt = {}
        for i, p in enumerate(kept):
            c = counts.setdefault(p["label"], [0, 0, 0])
            if i in hits:
                c[0] += 1
                matched_gt[p["label"]] = matched_gt.get(p["label"], 0) + 1
            else:
                c[1] += 1
        for g in gts:
            counts.setdefault(g["label"], [0, 0, 0])
            support[g["label"]] = support.get(g["label"], 0) + 1
        for lab in {g["label"] for g in gts}:
            total = sum(1 for g in gts if g["label"] == lab)
            counts[lab][2] += total - matched_gt.get(lab, 0)

        all_hits = match(preds, gts, iou_threshold)
        for i, p in enumerate(preds):
            ranked.setdefault(p["label"], []).append((rank_key(p, 0)[:-1] + (image_id,), i in all_hits))

    per_class = []
    tot = [0, 0, 0]
    for lab in sorted(counts):
        tp, fp, fn = counts[lab]
        tot = [tot[0] + tp, tot[1] + fp, tot[2] + fn]
        p, r, f = prf(tp, fp, fn)
        entries = sorted(ranked.get(lab, []), key=lambda t: t[0])
        ap = average_precision([hit for _, hit in entries], support.get(lab, 0))
        per_class.append({
            "ap": ap, "f1": f, "fn": fn, "fp": fp, "label": lab,
            "precision": p, "recall": r, "support": support.get(lab, 0), "tp": tp,
        })

    eligible = [c["ap"] for c in per_class if c["support"] >= 1]
    map_50 = sum(eligible) / len(eligible) if eligible else None

    tp, fp, fn = tot
    p, r, f = prf(tp, fp, fn)
    acc = tp / (tp + fp + fn) if tp + fp + fn > 0 else None

    seconds = [s for _, _, _, s in images if s is not None]
    latency = None
    if seconds:
        latency = {
            "count": len(seconds),
            "max": max(seconds),
            "mean": sum(seconds) / len(seconds),
            "median": median(seconds),
            "min": min(seconds),
        }

    return {
        "aggregate": {"accuracy": acc, "f1": f, "fn": fn, "fp": fp, "precision": p, "recall": r, "tp": tp},
        "config": {"confidence_threshold": conf_threshold, "iou_threshold": iou_threshold},
        "images": len(images),
        "latency": latency,
        "map_50": map_50,
        "per_class": per_class,
    }


def round_sig(x):
    return x if x == 0 else float(f"{x:.5e}")


def format_float(x):
    """Shortest round-trip digits laid out the way serde_json prints f64."""
    mantissa, _, exp = f"{x!r}".partition("e")
    exp = int(exp) if exp else 0
    sign = "-" if mantissa.startswith("-") else ""
    mantissa = mantissa.lstrip("-")
    whole, _, frac = mantissa.partition(".")
    digits = (whole + frac).lstrip("0")
    point = len(whole) + exp - (len(whole + frac) - len((whole + frac).lstrip("0")))
    if frac == "0":
        digits = whole.lstrip("0") or "0"
        point = len(digits) + exp
    digits = digits.rstrip("0") or "0"
    if digits == "0":
        return sign + "0.0"
    e = point - len(digits)
    if 0 <= e and point <= 16:
        return sign + digits + "0" * e + ".0"
    if 0 < point <= 16:
        return sign + digits[:point] + "." + digits[point:]
    if -5 < point <= 0:
        return sign + "0." + "0" * (-point) + digits
    if len(digits) == 1:
        return f"{sign}{digits}e{point - 1}"
    return f"{sign}{digits[0]}.{digits[1:]}e{point - 1}"


def dump(value, indent=0):
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(round_sig(value))
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, list):
        if not value:
            return "[]"
        items = [inner + dump(v, indent + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [inner + json.dumps(k) + ": " + dump(value[k], indent + 1) for k in sorted(value)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(type(value))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("corpus")
    parser.add_argument("labelmap")
    parser.add_argument("--iou", type=float, default=0.5)
    parser.add_argument("--conf", type=float, default=0.25)
    parser.add_argument("--out")
    args = parser.parse_args()
    with open(args.corpus, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    with open(args.labelmap, encoding="utf-8") as fh:
        labelmap = json.load(fh)
    text = dump(evaluate(records, labelmap, args.iou, args.conf)) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


if __name__ == "__main__":
    main()
