"""Regenerates the bundled test data under data/.

Everything is deterministic: rerunning leaves the files byte-identical.
The golden CVIS file is not produced here; it comes from `convis saliency`.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

ROOT = Path(__file__).resolve().parent.parent / "data"

SYNSETS = [
    ("entity.n.01", ["entity"], "that which is perceived or known or inferred to have its own distinct existence (living or nonliving)", []),
    ("physical_entity.n.01", ["physical_entity"], "an entity that has physical existence", ["entity.n.01"]),
    ("abstraction.n.06", ["abstraction", "abstract_entity"], "a general concept formed by extracting common features from specific examples", ["entity.n.01"]),
    ("attribute.n.02", ["attribute"], "an abstraction belonging to or characteristic of an entity", ["abstraction.n.06"]),
    ("color.n.01", ["color", "colour"], "a visual attribute of things that results from the light they emit or transmit or reflect", ["attribute.n.02"]),
    ("object.n.01", ["object", "physical_object"], "a tangible and visible entity; an entity that can cast a shadow", ["physical_entity.n.01"]),
    ("whole.n.02", ["whole", "unit"], "an assemblage of parts that is regarded as a single entity", ["object.n.01"]),
    ("living_thing.n.01", ["living_thing", "animate_thing"], "a living (or once living) entity", ["whole.n.02"]),
    ("organism.n.01", ["organism", "being"], "a living thing that has (or can develop) the ability to act or function independently", ["living_thing.n.01"]),
    ("animal.n.01", ["animal", "animate_being", "beast"], "a living organism characterized by voluntary movement", ["organism.n.01"]),
    ("domestic_animal.n.01", ["domestic_animal", "domesticated_animal"], "any of various animals that have been tamed and made fit for a human environment", ["animal.n.01"]),
    ("carnivore.n.01", ["carnivore"], "a terrestrial or aquatic flesh-eating mammal", ["animal.n.01"]),
    ("canine.n.02", ["canine", "canid"], "any of various fissiped mammals with nonretractile claws and typically long muzzles", ["carnivore.n.01"]),
    ("dog.n.01", ["dog", "domestic_dog"], "a member of the genus Canis that has been domesticated by man since prehistoric times", ["canine.n.02", "domestic_animal.n.01"]),
    ("feline.n.01", ["feline", "felid"], "any of various lithe-bodied roundheaded fissiped mammals, many with retractile claws", ["carnivore.n.01"]),
    ("cat.n.01", ["cat", "true_cat"], "feline mammal usually having thick soft fur and no ability to roar", ["feline.n.01"]),
    ("bird.n.01", ["bird"], "warm-blooded egg-laying vertebrates characterized by feathers and forelimbs modified as wings", ["animal.n.01"]),
    ("sparrow.n.01", ["sparrow", "true_sparrow"], "any of several small dull-colored singing birds feeding on seeds or insects", ["bird.n.01"]),
    ("plant.n.02", ["plant", "flora", "plant_life"], "a living organism lacking the power of locomotion", ["organism.n.01"]),
    ("tree.n.01", ["tree"], "a tall perennial woody plant having a main trunk and branches forming a distinct elevated crown", ["plant.n.02"]),
    ("flower.n.01", ["flower"], "a plant cultivated for its blooms or blossoms", ["plant.n.02"]),
    ("artifact.n.01", ["artifact", "artefact"], "a man-made object taken as a whole", ["whole.n.02"]),
    ("instrumentality.n.03", ["instrumentality", "instrumentation"], "an artifact (or system of artifacts) that is instrumental in accomplishing some end", ["artifact.n.01"]),
    ("conveyance.n.03", ["conveyance", "transport"], "something that serves as a means of transportation", ["instrumentality.n.03"]),
    ("vehicle.n.01", ["vehicle"], "a conveyance that transports people or objects", ["conveyance.n.03"]),
    ("wheeled_vehicle.n.01", ["wheeled_vehicle"], "a vehicle that moves on wheels and usually has a container for transporting things or people", ["vehicle.n.01"]),
    ("motor_vehicle.n.01", ["motor_vehicle", "automotive_vehicle"], "a self-propelled wheeled vehicle that does not run on rails", ["wheeled_vehicle.n.01"]),
    ("car.n.01", ["car", "auto", "automobile", "machine", "motorcar"], "a motor vehicle with four wheels; usually propelled by an internal combustion engine", ["motor_vehicle.n.01"]),
    ("truck.n.01", ["truck", "motortruck"], "an automotive vehicle suitable for hauling", ["motor_vehicle.n.01"]),
    ("bicycle.n.01", ["bicycle", "bike", "wheel", "cycle"], "a wheeled vehicle that has two wheels and is moved by foot pedals", ["wheeled_vehicle.n.01"]),
    ("container.n.01", ["container"], "any object that can be used to hold things (especially a large metal boxlike object of standardized dimensions that can be loaded from one form of transport to another)", ["instrumentality.n.03"]),
    ("cup.n.01", ["cup"], "a small open container usually used for drinking; usually has a handle", ["container.n.01"]),
    ("bottle.n.01", ["bottle"], "a glass or plastic vessel used for storing drinks or other liquids; typically cylindrical without handles and with a narrow neck that can be plugged or capped", ["container.n.01"]),
    ("furniture.n.01", ["furniture", "piece_of_furniture", "article_of_furniture"], "furnishings that make a room or other area ready for occupancy", ["instrumentality.n.03"]),
    ("chair.n.01", ["chair"], "a seat for one person, with a support for the back", ["furniture.n.01"]),
]

SEEDS = ["dog.n.01", "cat.n.01", "sparrow.n.01", "tree.n.01", "flower.n.01", "car.n.01",
         "truck.n.01", "bicycle.n.01", "cup.n.01", "bottle.n.01", "chair.n.01"]


def image_key(path):
    img = Image.open(path).convert("RGB")
    w, h = img.size
    digest = hashlib.sha256()
    digest.update(w.to_bytes(4, "little"))
    digest.update(h.to_bytes(4, "little"))
    digest.update(bytes([3]))
    digest.update(img.tobytes())
    return digest.hexdigest()


def unit(v):
    return v / np.linalg.norm(v)


def write_lexicon():
    with open(ROOT / "lexicon.jsonl", "w") as f:
        for sid, lemmas, definition, hypernyms in SYNSETS:
            f.write(json.dumps({"id": sid, "lemmas": lemmas, "definition": definition,
                                "hypernyms": hypernyms}) + "\n")
    with open(ROOT / "seeds.txt", "w") as f:
        f.write("# leaf concepts of the bundled lexicon; ancestors are added automatically\n")
        f.write("\n".join(SEEDS) + "\n")


def golden_image(path, seed):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:48, 0:48]
    base = np.stack([x * 5, y * 5, (x + y) * 2], axis=-1).astype(np.uint8)
    img = Image.fromarray(base, "RGB")
    d = ImageDraw.Draw(img)
    cx, cy = rng.integers(12, 36, size=2)
    d.ellipse([cx - 9, cy - 9, cx + 9, cy + 9], fill=(220, 40, 30))
    d.rectangle([4, 30, 14, 44], fill=(20, 30, 200))
    img.save(path, optimize=False)


def write_golden():
    g = ROOT / "golden"
    g.mkdir(exist_ok=True)
    golden_image(g / "image.png", 7)
    (g / "saliency.conf").write_text(
        "# configuration the golden map was produced with\n"
        "lexicon_path = ../lexicon.jsonl\n"
        "seed_path = ../seeds.txt\n"
        "backend = mock-hash\n"
        "dimension = 64\n"
        "delta_s = 16\n"
        "delta_l = 32\n"
        "omega = 8\n"
        "window_mode = containment\n"
        "boundary_policy = fit-only\n"
    )


def write_wsol():
    w = ROOT / "wsol"
    w.mkdir(exist_ok=True)
    golden_image(w / "a.png", 11)
    golden_image(w / "b.png", 12)
    manifest = [
        {"path": "a.png", "box": [8, 8, 40, 40], "concept": "dog.n.01"},
        {"path": "b.png", "box": [0, 16, 32, 48], "concept": "car.n.01"},
    ]
    (w / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def write_ood():
    o = ROOT / "ood"
    o.mkdir(exist_ok=True)
    rng = np.random.default_rng(2024)
    dim = 16
    text = {sid: unit(rng.standard_normal(dim)) for sid, *_ in SYNSETS}
    defs = {sid: d for sid, _, d, _ in SYNSETS}
    group = {"dog.n.01": "animal.n.01", "cat.n.01": "animal.n.01", "sparrow.n.01": "animal.n.01",
             "car.n.01": "motor_vehicle.n.01", "truck.n.01": "motor_vehicle.n.01"}
    items = {
        "train": ["dog.n.01", "cat.n.01", "sparrow.n.01"],
        "test": ["dog.n.01", "cat.n.01", "sparrow.n.01", "dog.n.01", "car.n.01", "truck.n.01", "car.n.01"],
    }
    images = {}
    spec = {"s_plus": "animal.n.01", "s_minus": "motor_vehicle.n.01",
            "lambda_plus": ["dog.n.01", "cat.n.01", "sparrow.n.01"],
            "lambda_minus": ["car.n.01", "truck.n.01"], "train": [], "test": []}
    for split, classes in items.items():
        for k, cls in enumerate(classes):
            name = f"{split}_{k}_{cls.split('.')[0]}.png"
            pix = rng.integers(0, 256, size=(12, 12, 3), dtype=np.uint8)
            Image.fromarray(pix, "RGB").save(o / name)
            v = unit(text[cls] + 0.8 * text[group[cls]] + 0.25 * rng.standard_normal(dim))
            images[image_key(o / name)] = v
            spec[split].append({"path": name, "class": cls})
    fixture = {
        "dimension": dim,
        "text": {defs[s]: [float(x) for x in v.astype(np.float32)] for s, v in text.items()},
        "image_sha256": {k: [float(x) for x in v.astype(np.float32)] for k, v in images.items()},
    }
    (o / "fixture.json").write_text(json.dumps(fixture, indent=1, sort_keys=True) + "\n")
    (o / "spec.json").write_text(json.dumps(spec, indent=2) + "\n")
    check_separable(text, images, spec, o)


def check_separable(text, images, spec, o):
    ids = sorted(text)
    rows = np.stack([text[s] for s in ids])
    children = {s: [] for s in ids}
    for sid, _, _, hyp in SYNSETS:
        for p in hyp:
            children[p].append(sid)

    def desc(s):
        out, stack = set(), [s]
        while stack:
            n = stack.pop()
            if n not in out:
                out.add(n)
                stack.extend(children[n])
        return out

    sub = [ids.index(s) for s in desc(spec["s_plus"])]
    train = [images[image_key(o / t["path"])] for t in spec["train"]]

    def scores(x):
        z = rows @ x
        best = max(z[i] for i in sub)
        own = z[ids.index(spec["s_plus"])]
        return ((z < best).sum(), (z < own).sum(), max(float(t @ x) for t in train))

    pos = [scores(images[image_key(o / t["path"])]) for t in spec["test"] if t["class"] in spec["lambda_plus"]]
    neg = [scores(images[image_key(o / t["path"])]) for t in spec["test"] if t["class"] in spec["lambda_minus"]]
    for m in range(3):
        assert min(p[m] for p in pos) > max(n[m] for n in neg), f"method {m} not separable"


if __name__ == "__main__":
    ROOT.mkdir(exist_ok=True)
    write_lexicon()
    write_golden()
    write_wsol()
    write_ood()
