"""Synthetic scene and question generation, the symbolic answer oracle, and
a noise-perturbed detector simulator with precision/recall scoring.

Scenes are sampled with rejection so objects keep a minimum pixel
separation, with camera depth correlated to the y coordinate (smaller y is
farther away). Questions are structured queries rendered through fixed word
templates and answered by exhaustive evaluation over the scene's objects.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .scene import (
    ATTRIBUTE_NAMES,
    ATTRIBUTE_VALUES,
    DEFAULT_MIN_SEPARATION,
    DEFAULT_N_MAX,
    IMAGE_HEIGHT,
    IMAGE_WIDTH,
    DetectedObject,
    Scene,
    SceneObject,
    bbox_of,
    class_id_of,
)

FAMILIES = ("count", "exist", "compare_integer", "query_attribute", "compare_attribute")
BINARY_FAMILIES = ("exist", "compare_integer", "compare_attribute")
RELATIONS = ("left", "right", "front", "behind")
COMPARE_OPS = ("more", "fewer", "equal")


class GenerationError(RuntimeError):
    """Sampling could not satisfy the generation constraints."""


class AmbiguousQueryError(ValueError):
    """A filter that must identify exactly one object matched zero or many."""


# ---------------------------------------------------------------------------
# scene generation


@dataclass(frozen=True)
class SceneGenConfig:
    min_objects: int = 3
    max_objects: int = 6
    n_max: int = DEFAULT_N_MAX
    min_separation: float = DEFAULT_MIN_SEPARATION
    margin: int = 24
    depth_near: float = 8.0
    depth_far: float = 16.0
    max_attempts: int = 1000


def generate_scene(
    rng: np.random.Generator, cfg: SceneGenConfig = SceneGenConfig(), scene_id: str = "scene"
) -> Scene:
    if cfg.min_objects < 1 or cfg.max_objects > cfg.n_max or cfg.min_objects > cfg.max_objects:
        raise ValueError(f"bad object-count range [{cfg.min_objects}, {cfg.max_objects}]")
    n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objects: list[SceneObject] = []
    for _ in range(n):
        color = int(rng.integers(len(ATTRIBUTE_VALUES["color"])))
        material = int(rng.integers(len(ATTRIBUTE_VALUES["material"])))
        size = int(rng.integers(len(ATTRIBUTE_VALUES["size"])))
        shape = int(rng.integers(len(ATTRIBUTE_VALUES["shape"])))
        for attempt in range(cfg.max_attempts):
            x = int(rng.integers(cfg.margin, IMAGE_WIDTH - cfg.margin))
            y = int(rng.integers(cfg.margin, IMAGE_HEIGHT - cfg.margin))
            if all(
                np.hypot(o.x - x, o.y - y) >= cfg.min_separation for o in objects
            ):
                break
        else:
            raise GenerationError(
                f"could not place object {len(objects)} after {cfg.max_attempts} "
                f"attempts; scene too crowded"
            )
        # depth tracks y: the top of the image is the far side of the scene
        depth = cfg.depth_far - (y / (IMAGE_HEIGHT - 1)) * (cfg.depth_far - cfg.depth_near)
        depth += float(rng.uniform(-0.5, 0.5))
        pos3d = (
            (x / IMAGE_WIDTH - 0.5) * 6.0,
            (0.5 - y / IMAGE_HEIGHT) * 6.0,
            depth,
        )
        rotation = float(rng.uniform(0.0, 360.0))
        objects.append(
            SceneObject(color, material, size, shape, x, y, pos3d, rotation)
        )
    return Scene(id=scene_id, objects=objects)


# ---------------------------------------------------------------------------
# structured queries


@dataclass
class FilterSpec:
    """Attribute constraints plus an optional spatial relation to a unique
    anchor. The anchor filter carries attribute constraints only."""

    attributes: dict[str, str] = field(default_factory=dict)
    relation: str | None = None
    anchor: "FilterSpec | None" = None


@dataclass
class StructuredQuery:
    family: str
    filter: FilterSpec
    filter2: FilterSpec | None = None
    target_attribute: str | None = None
    op: str | None = None


@dataclass
class QASample:
    scene_id: str
    question_tokens: list[str]
    query: StructuredQuery
    answer: str


def _relation_holds(obj: SceneObject, relation: str, anchor: SceneObject) -> bool:
    # in front of = nearer the camera = larger pixel y; comparisons are
    # strict, so the anchor never relates to itself
    if relation == "left":
        return obj.x < anchor.x
    if relation == "right":
        return obj.x > anchor.x
    if relation == "front":
        return obj.y > anchor.y
    if relation == "behind":
        return obj.y < anchor.y
    raise ValueError(f"unknown relation {relation!r}")


def filter_matches(scene: Scene, filt: FilterSpec) -> list[int]:
    """Indices of objects satisfying the filter, in scene order."""
    idxs = [
        i
        for i, obj in enumerate(scene.objects)
        if all(obj.attribute_value(a) == v for a, v in filt.attributes.items())
    ]
    if filt.relation is not None:
        anchor_idxs = filter_matches(scene, filt.anchor)
        if len(anchor_idxs) != 1:
            raise AmbiguousQueryError(
                f"anchor filter matches {len(anchor_idxs)} objects, need exactly 1"
            )
        anchor = scene.objects[anchor_idxs[0]]
        idxs = [
            i for i in idxs if _relation_holds(scene.objects[i], filt.relation, anchor)
        ]
    return idxs


def oracle_answer(scene: Scene, query: StructuredQuery) -> str:
    """Ground-truth answer by exhaustive evaluation; pure in (scene, query)."""
    matches = filter_matches(scene, query.filter)
    if query.family == "count":
        return str(len(matches))
    if query.family == "exist":
        return "yes" if matches else "no"
    if query.family == "compare_integer":
        others = filter_matches(scene, query.filter2)
        if query.op == "more":
            result = len(matches) > len(others)
        elif query.op == "fewer":
            result = len(matches) < len(others)
        elif query.op == "equal":
            result = len(matches) == len(others)
        else:
            raise ValueError(f"unknown comparison op {query.op!r}")
        return "yes" if result else "no"
    if query.family == "query_attribute":
        if len(matches) != 1:
            raise AmbiguousQueryError(
                f"query filter matches {len(matches)} objects, need exactly 1"
            )
        return scene.objects[matches[0]].attribute_value(query.target_attribute)
    if query.family == "compare_attribute":
        others = filter_matches(scene, query.filter2)
        if len(matches) != 1 or len(others) != 1:
            raise AmbiguousQueryError(
                f"compare filters match {len(matches)} and {len(others)} objects, "
                f"need exactly 1 each"
            )
        a = scene.objects[matches[0]].attribute_value(query.target_attribute)
        b = scene.objects[others[0]].attribute_value(query.target_attribute)
        return "yes" if a == b else "no"
    raise ValueError(f"unknown question family {query.family!r}")


# ---------------------------------------------------------------------------
# question sampling


@dataclass(frozen=True)
class QuestionGenConfig:
    relation_prob: float = 0.3
    max_attempts: int = 100
    answer_cap: float = 0.40
    binary_answer_cap: float = 0.55


class AnswerBalancer:
    """Per-family answer-share caps, applied by rejection during generation.

    Binary families get a looser cap: with only yes/no available, one of the
    two must carry at least half the mass, so 0.40 is unreachable there.
    """

    def __init__(self, cap: float = 0.40, binary_cap: float = 0.55):
        self.cap = cap
        self.binary_cap = binary_cap
        self.counts: dict[str, Counter] = {f: Counter() for f in FAMILIES}

    def allows(self, family: str, answer: str) -> bool:
        counter = self.counts[family]
        total = sum(counter.values())
        cap = self.binary_cap if family in BINARY_FAMILIES else self.cap
        return counter[answer] + 1 <= max(2.0, cap * (total + 1))

    def record(self, family: str, answer: str) -> None:
        self.counts[family][answer] += 1


def _sample_value(rng: np.random.Generator, scene: Scene, attr: str) -> str:
    # lean on values present in the scene so filters are not mostly empty
    if rng.random() < 0.7 and scene.objects:
        obj = scene.objects[int(rng.integers(len(scene.objects)))]
        return obj.attribute_value(attr)
    values = ATTRIBUTE_VALUES[attr]
    return values[int(rng.integers(len(values)))]


def _sample_plain_filter(rng: np.random.Generator, scene: Scene) -> FilterSpec:
    k = int(rng.integers(1, 3))
    attrs = list(rng.choice(len(ATTRIBUTE_NAMES), size=k, replace=False))
    constraints = {
        ATTRIBUTE_NAMES[a]: _sample_value(rng, scene, ATTRIBUTE_NAMES[a])
        for a in sorted(attrs)
    }
    return FilterSpec(attributes=constraints)


def unique_filter_for(
    rng: np.random.Generator, scene: Scene, obj_idx: int
) -> FilterSpec | None:
    """A filter matching exactly scene.objects[obj_idx], or None.

    Tries attribute subsets of increasing size first, then falls back to
    attaching a spatial relation to a unique anchor.
    """
    obj = scene.objects[obj_idx]
    subsets: list[tuple[str, ...]] = []
    for size in (1, 2, 3, 4):
        level = []
        for bits in range(16):
            chosen = tuple(
                a for i, a in enumerate(ATTRIBUTE_NAMES) if bits >> i & 1
            )
            if len(chosen) == size:
                level.append(chosen)
        order = rng.permutation(len(level))
        subsets.extend(level[i] for i in order)
    for chosen in subsets:
        filt = FilterSpec(
            attributes={a: obj.attribute_value(a) for a in chosen}
        )
        if filter_matches(scene, filt) == [obj_idx]:
            return filt
    # identical attribute twins: disambiguate spatially
    others = [i for i in range(len(scene.objects)) if i != obj_idx]
    for anchor_idx in rng.permutation(others):
        anchor_filt = unique_attr_filter(rng, scene, int(anchor_idx))
        if anchor_filt is None:
            continue
        for rel_i in rng.permutation(len(RELATIONS)):
            filt = FilterSpec(
                attributes={a: obj.attribute_value(a) for a in ATTRIBUTE_NAMES},
                relation=RELATIONS[rel_i],
                anchor=anchor_filt,
            )
            if filter_matches(scene, filt) == [obj_idx]:
                return filt
    return None


def unique_attr_filter(
    rng: np.random.Generator, scene: Scene, obj_idx: int
) -> FilterSpec | None:
    """Attribute-only unique filter (no relation), or None."""
    obj = scene.objects[obj_idx]
    for size in (1, 2, 3, 4):
        level = []
        for bits in range(16):
            chosen = tuple(a for i, a in enumerate(ATTRIBUTE_NAMES) if bits >> i & 1)
            if len(chosen) == size:
                level.append(chosen)
        for i in rng.permutation(len(level)):
            filt = FilterSpec(
                attributes={a: obj.attribute_value(a) for a in level[i]}
            )
            if filter_matches(scene, filt) == [obj_idx]:
                return filt
    return None


def _maybe_add_relation(
    rng: np.random.Generator, scene: Scene, filt: FilterSpec, cfg: QuestionGenConfig
) -> FilterSpec:
    if rng.random() >= cfg.relation_prob or len(scene.objects) < 2:
        return filt
    anchor_idx = int(rng.integers(len(scene.objects)))
    anchor = unique_attr_filter(rng, scene, anchor_idx)
    if anchor is None:
        return filt
    relation = RELATIONS[int(rng.integers(len(RELATIONS)))]
    return FilterSpec(attributes=filt.attributes, relation=relation, anchor=anchor)


def _sample_query(
    rng: np.random.Generator, scene: Scene, family: str, cfg: QuestionGenConfig
) -> StructuredQuery | None:
    if family in ("count", "exist"):
        filt = _maybe_add_relation(rng, scene, _sample_plain_filter(rng, scene), cfg)
        return StructuredQuery(family, filt)
    if family == "compare_integer":
        f1 = _maybe_add_relation(rng, scene, _sample_plain_filter(rng, scene), cfg)
        f2 = _sample_plain_filter(rng, scene)
        op = COMPARE_OPS[int(rng.integers(len(COMPARE_OPS)))]
        return StructuredQuery(family, f1, filter2=f2, op=op)
    if family == "query_attribute":
        obj_idx = int(rng.integers(len(scene.objects)))
        filt = unique_filter_for(rng, scene, obj_idx)
        if filt is None:
            return None
        free = [a for a in ATTRIBUTE_NAMES if a not in filt.attributes]
        if not free:
            return None
        target = free[int(rng.integers(len(free)))]
        return StructuredQuery(family, filt, target_attribute=target)
    if family == "compare_attribute":
        if len(scene.objects) < 2:
            return None
        i, j = rng.choice(len(scene.objects), size=2, replace=False)
        f1 = unique_filter_for(rng, scene, int(i))
        f2 = unique_filter_for(rng, scene, int(j))
        if f1 is None or f2 is None:
            return None
        free = [
            a
            for a in ATTRIBUTE_NAMES
            if a not in f1.attributes and a not in f2.attributes
        ]
        if not free:
            return None
        target = free[int(rng.integers(len(free)))]
        return StructuredQuery(family, f1, filter2=f2, target_attribute=target)
    raise ValueError(f"unknown question family {family!r}")


# ---------------------------------------------------------------------------
# rendering to word sequences

_REL_PHRASES = {
    "left": "left of",
    "right": "right of",
    "front": "in front of",
    "behind": "behind",
}

_COUNT_TEMPLATES = (
    "how many {p} are there ?",
    "what number of {p} are there ?",
    "how many {p} are in the scene ?",
)
_EXIST_TEMPLATES = (
    "is there a {s} ?",
    "are there any {p} ?",
    "does the scene contain a {s} ?",
)
_COMPARE_INTEGER_TEMPLATES = {
    "more": (
        "are there more {p1} than {p2} ?",
        "is the number of {p1} greater than the number of {p2} ?",
        "do the {p1} outnumber the {p2} ?",
    ),
    "fewer": (
        "are there fewer {p1} than {p2} ?",
        "is the number of {p1} less than the number of {p2} ?",
        "are the {p1} outnumbered by the {p2} ?",
    ),
    "equal": (
        "are there the same number of {p1} and {p2} ?",
        "is the number of {p1} equal to the number of {p2} ?",
        "are there as many {p1} as {p2} ?",
    ),
}
_QUERY_TEMPLATES = (
    "what {a} is the {s} ?",
    "what is the {a} of the {s} ?",
    "the {s} has what {a} ?",
)
_COMPARE_ATTRIBUTE_TEMPLATES = (
    "does the {s1} have the same {a} as the {s2} ?",
    "is the {a} of the {s1} the same as the {a} of the {s2} ?",
    "do the {s1} and the {s2} have the same {a} ?",
)

_PLURAL_SHAPES = {"cube": "cubes", "sphere": "spheres", "cylinder": "cylinders"}


def describe_filter(filt: FilterSpec, plural: bool) -> str:
    words = []
    for attr in ("size", "color", "material"):
        if attr in filt.attributes:
            words.append(filt.attributes[attr])
    shape = filt.attributes.get("shape")
    if shape is None:
        words.append("objects" if plural else "object")
    else:
        words.append(_PLURAL_SHAPES[shape] if plural else shape)
    phrase = " ".join(words)
    if filt.relation is not None:
        link = "that are" if plural else "that is"
        anchor = describe_filter(filt.anchor, plural=False)
        phrase = f"{phrase} {link} {_REL_PHRASES[filt.relation]} the {anchor}"
    return phrase


def render_question(rng: np.random.Generator, query: StructuredQuery) -> list[str]:
    """Pick a template for the query's family and render it to word tokens."""
    if query.family == "count":
        t = _COUNT_TEMPLATES[int(rng.integers(len(_COUNT_TEMPLATES)))]
        text = t.format(p=describe_filter(query.filter, plural=True))
    elif query.family == "exist":
        t = _EXIST_TEMPLATES[int(rng.integers(len(_EXIST_TEMPLATES)))]
        text = t.format(
            s=describe_filter(query.filter, plural=False),
            p=describe_filter(query.filter, plural=True),
        )
    elif query.family == "compare_integer":
        group = _COMPARE_INTEGER_TEMPLATES[query.op]
        t = group[int(rng.integers(len(group)))]
        text = t.format(
            p1=describe_filter(query.filter, plural=True),
            p2=describe_filter(query.filter2, plural=True),
        )
    elif query.family == "query_attribute":
        t = _QUERY_TEMPLATES[int(rng.integers(len(_QUERY_TEMPLATES)))]
        text = t.format(
            a=query.target_attribute, s=describe_filter(query.filter, plural=False)
        )
    elif query.family == "compare_attribute":
        t = _COMPARE_ATTRIBUTE_TEMPLATES[
            int(rng.integers(len(_COMPARE_ATTRIBUTE_TEMPLATES)))
        ]
        text = t.format(
            a=query.target_attribute,
            s1=describe_filter(query.filter, plural=False),
            s2=describe_filter(query.filter2, plural=False),
        )
    else:
        raise ValueError(f"unknown question family {query.family!r}")
    return text.split()


def generate_question(
    rng: np.random.Generator,
    scene: Scene,
    family: str,
    cfg: QuestionGenConfig = QuestionGenConfig(),
    balancer: AnswerBalancer | None = None,
) -> QASample:
    """Sample a query valid on this scene, render it, and answer it.

    Retries up to cfg.max_attempts, also rejecting answers the balancer says
    are over-represented for this family.
    """
    for _ in range(cfg.max_attempts):
        query = _sample_query(rng, scene, family, cfg)
        if query is None:
            continue
        try:
            answer = oracle_answer(scene, query)
        except AmbiguousQueryError:
            continue
        if balancer is not None and not balancer.allows(family, answer):
            continue
        if balancer is not None:
            balancer.record(family, answer)
        tokens = render_question(rng, query)
        return QASample(
            scene_id=scene.id, question_tokens=tokens, query=query, answer=answer
        )
    raise GenerationError(
        f"no satisfiable {family} query found for scene {scene.id} "
        f"in {cfg.max_attempts} attempts"
    )


# ---------------------------------------------------------------------------
# detector simulation and scoring


@dataclass(frozen=True)
class NoiseConfig:
    """Detector imperfection model. drop removes an object, flip corrupts one
    attribute of its class, jitter shifts the pixel center."""

    drop_prob: float = 0.0
    attribute_flip_prob: float = 0.0
    position_jitter_sigma: float = 0.0

    def __post_init__(self):
        for name in ("drop_prob", "attribute_flip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.position_jitter_sigma < 0:
            raise ValueError("position_jitter_sigma must be >= 0")


def perturb_detections(
    scene: Scene, noise: NoiseConfig, rng: np.random.Generator
) -> list[DetectedObject]:
    """Simulated detector output; with zero noise it equals the ground truth."""
    detections = []
    for obj in scene.objects:
        if noise.drop_prob > 0 and rng.random() < noise.drop_prob:
            continue
        attrs = [obj.color, obj.material, obj.size, obj.shape]
        if noise.attribute_flip_prob > 0 and rng.random() < noise.attribute_flip_prob:
            which = int(rng.integers(len(ATTRIBUTE_NAMES)))
            n_values = len(ATTRIBUTE_VALUES[ATTRIBUTE_NAMES[which]])
            shift = int(rng.integers(1, n_values))
            attrs[which] = (attrs[which] + shift) % n_values
        x, y = obj.x, obj.y
        if noise.position_jitter_sigma > 0:
            dx, dy = rng.normal(0.0, noise.position_jitter_sigma, size=2)
            x = int(np.clip(round(x + dx), 0, IMAGE_WIDTH - 1))
            y = int(np.clip(round(y + dy), 0, IMAGE_HEIGHT - 1))
        perturbed = SceneObject(
            attrs[0], attrs[1], attrs[2], attrs[3], x, y, obj.pos3d, obj.rotation
        )
        detections.append(
            DetectedObject(class_id=class_id_of(*attrs), bbox=bbox_of(perturbed))
        )
    return detections


def iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    """Intersection over union for (x_min, y_min, width, height) boxes."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    iy = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def match_detections(
    gt: list[DetectedObject],
    det: list[DetectedObject],
    iou_threshold: float = 0.5,
) -> tuple[float, float]:
    """Greedy one-to-one matching by descending IoU; a match needs equal
    class id and IoU >= threshold. Returns (precision, recall)."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou threshold must be in (0, 1], got {iou_threshold}")
    candidates = []
    for gi, g in enumerate(gt):
        for di, d in enumerate(det):
            if g.class_id != d.class_id:
                continue
            v = iou(g.bbox, d.bbox)
            if v >= iou_threshold:
                candidates.append((v, gi, di))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_gt: set[int] = set()
    used_det: set[int] = set()
    matched = 0
    for _, gi, di in candidates:
        if gi in used_gt or di in used_det:
            continue
        used_gt.add(gi)
        used_det.add(di)
        matched += 1
    precision = matched / len(det) if det else (1.0 if not gt else 0.0)
    recall = matched / len(gt) if gt else (1.0 if not det else 0.0)
    return precision, recall


# ---------------------------------------------------------------------------
# JSON wire format


def filter_to_dict(filt: FilterSpec) -> dict:
    return {
        "attributes": dict(filt.attributes),
        "relation": filt.relation,
        "anchor": filter_to_dict(filt.anchor) if filt.anchor is not None else None,
    }


def filter_from_dict(data: dict) -> FilterSpec:
    anchor = data.get("anchor")
    return FilterSpec(
        attributes=dict(data["attributes"]),
        relation=data.get("relation"),
        anchor=filter_from_dict(anchor) if anchor is not None else None,
    )


def query_to_dict(query: StructuredQuery) -> dict:
    return {
        "family": query.family,
        "filter": filter_to_dict(query.filter),
        "filter2": filter_to_dict(query.filter2) if query.filter2 is not None else None,
        "target_attribute": query.target_attribute,
        "op": query.op,
    }


def query_from_dict(data: dict) -> StructuredQuery:
    filter2 = data.get("filter2")
    return StructuredQuery(
        family=data["family"],
        filter=filter_from_dict(data["filter"]),
        filter2=filter_from_dict(filter2) if filter2 is not None else None,
        target_attribute=data.get("target_attribute"),
        op=data.get("op"),
    )


def sample_to_dict(sample: QASample) -> dict:
    return {
        "scene_id": sample.scene_id,
        "question": list(sample.question_tokens),
        "query": query_to_dict(sample.query),
        "answer": sample.answer,
    }


def sample_from_dict(data: dict) -> QASample:
    return QASample(
        scene_id=data["scene_id"],
        question_tokens=list(data["question"]),
        query=query_from_dict(data["query"]),
        answer=data["answer"],
    )
