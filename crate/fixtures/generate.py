"""Regenerates the bundled test fixtures. Output is deterministic.

    python3 fixtures/generate.py

Writes fixtures/mini/* and fixtures/o365_mini/*. gold_matches.json is
hand-annotated and is not produced here.
"""

import json
import math
import random
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent
CATEGORIES = json.loads((ROOT.parent / "crates/core/data/coco_categories.json").read_text())
BY_NAME = {c["name"]: c["id"] for c in CATEGORIES}
PRESENT_PER_IMAGE = 40

# image id, caption, noun phrases as (phrase, class or None, cosine),
# classes that must be absent (hallucinated in the caption)
MINI = [
    (101, "A man rides a red bike down the street past a parked car.",
     [("A man", "person", .86), ("a red bike", "bicycle", .81), ("the street", None, 0), ("a parked car", "car", .75)], []),
    (102, "Two dogs chase a frisbee across the grass while a kitten watches from a bench.",
     [("Two dogs", "dog", .88), ("a frisbee", "frisbee", .90), ("the grass", None, 0), ("a kitten", "cat", .80), ("a bench", "bench", .84)], ["cat"]),
    (103, "A hot dog and a burger sit on a plate next to a mug of coffee.",
     [("A hot dog", "hot dog", .83), ("a burger", "sandwich", .76), ("a plate", None, 0), ("a mug", "cup", .77), ("coffee", None, 0)], ["cup"]),
    (104, "A teddy bear sits on a sofa in front of a television.",
     [("A teddy bear", "teddy bear", .92), ("a sofa", "couch", .79), ("front", None, 0), ("a television", "tv", .81)], ["tv"]),
    (105, "Three giraffes and a zebra graze near a tall tree.",
     [("Three giraffes", "giraffe", .87), ("a zebra", "zebra", .90), ("a tall tree", None, 0)], ["zebra"]),
    (106, "A baby elephant walks beside a large elephant at the river.",
     [("A baby elephant", "elephant", .84), ("a large elephant", "elephant", .86), ("the river", None, 0)], []),
    (107, "People wait at a bus stop while a taxi drives by a fire hydrant.",
     [("People", "person", .74), ("a bus stop", "bus", .72), ("a taxi", "car", .79), ("a fire hydrant", "fire hydrant", .93)], ["car"]),
    (108, "A woman holds an umbrella and a purse on a rainy sidewalk.",
     [("A woman", "person", .85), ("an umbrella", "umbrella", .91), ("a purse", "handbag", .78), ("a rainy sidewalk", None, 0)], []),
    (109, "A laptop computer and a computer mouse sit on a wooden desk.",
     [("A laptop computer", "laptop", .89), ("a computer mouse", "mouse", .83), ("a wooden desk", "dining table", .74)], ["mouse"]),
    (110, "Sheep and a few lambs graze in a green field near a fence.",
     [("Sheep", "sheep", .90), ("a few lambs", "sheep", .80), ("a green field", None, 0), ("a fence", None, 0)], []),
    (111, "A skateboarder does a trick on his skateboard at the park.",
     [("A skateboarder", "person", .76), ("a trick", None, 0), ("his skateboard", "skateboard", .90), ("the park", None, 0)], []),
    (112, "A surfer rides a wave on a white surfboard.",
     [("A surfer", "person", .77), ("a wave", None, 0), ("a white surfboard", "surfboard", .88)], []),
    (113, "Two horses pull a cart past a parked truck and a traffic light.",
     [("Two horses", "horse", .89), ("a cart", None, 0), ("a parked truck", "truck", .85), ("a traffic light", "traffic light", .92)], ["truck"]),
    (114, "A cat sleeps on a bed next to a remote control and a book.",
     [("A cat", "cat", .93), ("a bed", "bed", .90), ("a remote control", "remote", .86), ("a book", "book", .90)], ["book"]),
    (115, "A pizza with olives sits on a table beside a wine glass and a knife.",
     [("A pizza", "pizza", .94), ("olives", None, 0), ("a table", "dining table", .80), ("a wine glass", "wine glass", .90), ("a knife", "knife", .88)], ["knife"]),
    (116, "A boat floats on the lake under a clear sky with birds overhead.",
     [("A boat", "boat", .90), ("the lake", None, 0), ("a clear sky", None, 0), ("birds", "bird", .87)], ["bird"]),
    (117, "Kids play with a ball in the yard as a dog runs around.",
     [("Kids", "person", .75), ("a ball", "sports ball", .80), ("the yard", None, 0), ("a dog", "dog", .92)], ["dog"]),
    (118, "A kitchen with a refrigerator, an oven, and a sink.",
     [("A kitchen", None, 0), ("a refrigerator", "refrigerator", .91), ("an oven", "oven", .90), ("a sink", "sink", .89)], []),
    (119, "A train waits at the station as passengers board with luggage.",
     [("A train", "train", .92), ("the station", None, 0), ("passengers", "person", .78), ("luggage", "suitcase", .82)], ["suitcase"]),
    # image 120 has no annotations at all
    (120, "A blurry photo of an empty room with a chair.",
     [("A blurry photo", None, 0), ("an empty room", None, 0), ("a chair", "chair", .90)], None),
]

NOISE_DIMS = 16


def unit(v):
    return v / np.linalg.norm(v)


def rnd_box(rng):
    x1, y1 = rng.uniform(0, 0.6), rng.uniform(0, 0.6)
    return [round(x1, 2), round(y1, 2), round(x1 + rng.uniform(0.1, 0.4), 2), round(y1 + rng.uniform(0.1, 0.4), 2)]


def fmt_box(b):
    return "[" + ", ".join(f"{v:.2f}" for v in b) + "]"


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows))


def mini():
    out = ROOT / "mini"
    out.mkdir(exist_ok=True)
    rng = random.Random(20240607)
    images, annotations = [], []
    ann_id = 1
    for image_id, caption, nps, absent in MINI:
        images.append({"id": image_id, "file_name": f"{image_id:012d}.jpg", "width": 640, "height": 480})
        if absent is None:
            continue
        must = {BY_NAME[c] for _, c, _ in nps if c is not None} - {BY_NAME[a] for a in absent}
        banned = {BY_NAME[a] for a in absent}
        pool = sorted(set(BY_NAME.values()) - must - banned)
        present = sorted(must | set(rng.sample(pool, PRESENT_PER_IMAGE - len(must))))
        for cid in present:
            x, y = rng.randint(0, 500), rng.randint(0, 350)
            w, h = rng.randint(10, 140), rng.randint(10, 130)
            annotations.append({"id": ann_id, "image_id": image_id, "category_id": cid,
                                "bbox": [x, y, w, h], "area": w * h, "iscrowd": 0})
            ann_id += 1
    instances = {"info": {"description": "hallueval mini corpus"}, "images": images,
                 "annotations": annotations, "categories": CATEGORIES}
    (out / "instances.json").write_text(json.dumps(instances, indent=1) + "\n")

    write_jsonl(out / "captions.jsonl", [{"image_id": i, "caption": c} for i, c, _, _ in MINI])

    grounded = []
    for image_id, caption, nps, _ in MINI:
        text = caption
        for phrase, cls, _ in nps:
            if cls is None:
                continue
            k = text.find(phrase)
            assert k >= 0, phrase
            end = k + len(phrase)
            group = fmt_box(rnd_box(rng))
            text = text[:end] + " " + group + text[end:]
        grounded.append({"image_id": image_id, "caption": text})
    write_jsonl(out / "captions_grounded.jsonl", grounded)

    write_jsonl(out / "noun_phrases.jsonl",
                [{"text": c, "phrases": [p for p, _, _ in nps]} for _, c, nps, _ in MINI])

    # class i -> basis vector i; phrases mix their class axis with noise axes
    nrng = np.random.default_rng(7)
    dim = len(CATEGORIES) + NOISE_DIMS
    axis = {c["name"]: i for i, c in enumerate(CATEGORIES)}
    rows = []
    for c in CATEGORIES:
        v = np.zeros(dim)
        v[axis[c["name"]]] = 1.0
        rows.append({"text": c["name"], "vector": v.tolist()})
    seen = set()
    for _, _, nps, _ in MINI:
        for phrase, cls, cos in nps:
            if phrase in seen:
                continue
            seen.add(phrase)
            noise = np.zeros(dim)
            noise[len(CATEGORIES):] = unit(nrng.normal(size=NOISE_DIMS))
            v = noise if cls is None else cos * np.eye(dim)[axis[cls]] + math.sqrt(1 - cos * cos) * noise
            rows.append({"text": phrase, "vector": [round(x, 6) for x in v.tolist()]})
    write_jsonl(out / "embeddings.jsonl", rows)

    # refexp: IoU 1.0, 0.5, 0.49 and one unparseable prediction
    write_jsonl(out / "refexp.jsonl", [
        {"example_id": "r1", "expression": "the man on the left", "gold": [0.0, 0.0, 0.5, 0.5],
         "predicted_raw": "[0.00, 0.00, 0.50, 0.50]"},
        {"example_id": "r2", "expression": "the red bike", "gold": [0.0, 0.0, 0.5, 0.5],
         "predicted_raw": "The bike is at [0.00, 0.00, 0.50, 0.25]."},
        {"example_id": "r3", "expression": "the parked car", "gold": [0.0, 0.0, 0.5, 0.5],
         "predicted_raw": "[0.00, 0.00, 0.50, 0.245]"},
        {"example_id": "r4", "expression": "the dog", "gold": [0.2, 0.2, 0.6, 0.6],
         "predicted_raw": "I cannot find it"},
    ])

    write_jsonl(out / "chat_facts.jsonl", [{
        "prompt": (ROOT.parent / "crates/core/data/faithscore_prompt_v1.txt").read_text()
        .replace("{caption}", "A man rides a red bike"),
        "text": "There is a man\nThere is a bike\nThe bike is red\nA man is riding a bike",
    }])


NON_COCO = ["lamp", "pillow", "curtain", "helmet", "glove", "flag", "lantern", "barrel",
            "faucet", "towel", "basket", "candle", "drum", "guitar", "ladder", "mirror",
            "sneakers", "bracelet", "necklace", "trash can"]


def o365():
    out = ROOT / "o365_mini"
    out.mkdir(exist_ok=True)
    rng = random.Random(365)
    coco = [c["name"] for c in CATEGORIES[:20]]
    cats = [{"id": i + 1, "name": n} for i, n in enumerate(coco + NON_COCO)]
    images, annotations = [], []
    ann_id = 1
    for k in range(24):
        image_id = 9001 + k
        images.append({"id": image_id, "width": 800, "height": 600})
        for cid in sorted(rng.sample(range(1, len(cats) + 1), rng.randint(8, 18))):
            annotations.append({"id": ann_id, "image_id": image_id, "category_id": cid,
                                "bbox": [1, 1, 10, 10], "area": 100, "iscrowd": 0})
            ann_id += 1
    (out / "instances.json").write_text(json.dumps(
        {"images": images, "annotations": annotations, "categories": cats}, indent=1) + "\n")
    (out / "coco_classes.txt").write_text("# classes shared with COCO\n" + "\n".join(coco) + "\n")
    (out / "non_coco_classes.txt").write_text("# remaining classes\n" + "\n".join(NON_COCO) + "\n")


if __name__ == "__main__":
    mini()
    o365()
