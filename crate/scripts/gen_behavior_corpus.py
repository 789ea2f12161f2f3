"""Regenerates crates/core/assets/behavior_corpus.json (deterministic)."""

import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates/core/assets/behavior_corpus.json"
N = 115

HALF = {
    "door": (0.025, 0.45, 1.0),
    "drawer": (0.25, 0.3, 0.1),
    "box": (0.15, 0.15, 0.15),
    "pitcher": (0.06, 0.06, 0.12),
    "cracker_box": (0.03, 0.08, 0.11),
    "ball": (0.05, 0.05, 0.05),
    "suitcase": (0.1, 0.3, 0.25),
}
HAS_HANDLE = {"door", "drawer"}

TEMPLATES = [
    # (tree with {n} for the noun, action, phrases grounding the object, allowed nouns)
    ("(VP (VB drive) (PP (TO to) (NP (DT the) (NN {n}))))", "navigate", [2, 1], ["door", "drawer", "box"]),
    ("(VP (VB drive) (PP (IN through) (NP (DT the) (NN {n}))))", "navigate", [2, 1], ["door"]),
    ("(VP (VB open) (NP (DT the) (NN {n})))", "open", [1], ["door", "drawer", "box"]),
]


def obj(oid, label, x, y, z, parent=None):
    h = HALF.get(label, (0.03, 0.06, 0.02))
    return {
        "id": oid,
        "label": label,
        "pose": {"x": round(x, 3), "y": round(y, 3), "z": round(z, 3)},
        "bbox": {
            "min": [round(x - h[0], 3), round(y - h[1], 3), round(z - h[2], 3)],
            "max": [round(x + h[0], 3), round(y + h[1], 3), round(z + h[2], 3)],
        },
        "parent": parent,
    }


def world(rng, target):
    labels = [target] + rng.sample([l for l in HALF if l != target], rng.randint(0, 4))
    rng.shuffle(labels)
    objects, target_id, next_id = [], None, 1
    for label in labels:
        x, y = rng.uniform(1.0, 8.0), rng.uniform(-3.0, 3.0)
        z = HALF[label][2]
        oid = next_id
        next_id += 1
        objects.append(obj(oid, label, x, y, z))
        if label == target:
            target_id = oid
        if label in HAS_HANDLE and rng.random() < 0.75:
            objects.append(obj(next_id, f"{label}_handle", x - 0.04, y + 0.3 * HALF[label][1], z, parent=oid))
            next_id += 1
    return {"objects": objects}, target_id


def main():
    rng = random.Random(7)
    entries = []
    for i in range(N):
        tree, action, np_phrases, nouns = TEMPLATES[i % len(TEMPLATES)]
        noun = rng.choice(nouns)
        w, t = world(rng, noun)
        gold = [[p, f"object:@{t}"] for p in np_phrases] + [[0, f"{action}:@{t}"]]
        entries.append({"parse": tree.format(n=noun), "world": w, "gold": gold})
    OUT.write_text("[\n" + ",\n".join(json.dumps(e) for e in entries) + "\n]\n")


if __name__ == "__main__":
    main()
