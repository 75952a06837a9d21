"""Symbolic scene representation: attribute vocabularies, the 96-way class
identifier scheme, analytic bounding boxes, and scene validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")
MATERIALS = ("rubber", "metal")
SIZES = ("small", "large")
SHAPES = ("cube", "sphere", "cylinder")

ATTRIBUTE_NAMES = ("color", "material", "size", "shape")
ATTRIBUTE_VALUES = {
    "color": COLORS,
    "material": MATERIALS,
    "size": SIZES,
    "shape": SHAPES,
}

N_CLASSES = len(COLORS) * len(MATERIALS) * len(SIZES) * len(SHAPES)  # 96

IMAGE_WIDTH = 480
IMAGE_HEIGHT = 320
DEFAULT_N_MAX = 10
DEFAULT_MIN_SEPARATION = 30.0


@dataclass
class SceneObject:
    """One object: attribute indices, integer pixel position, 3-D position
    (world x, world y, camera depth), and rotation in degrees."""

    color: int
    material: int
    size: int
    shape: int
    x: int
    y: int
    pos3d: tuple[float, float, float]
    rotation: float

    def attribute_index(self, attribute: str) -> int:
        return {
            "color": self.color,
            "material": self.material,
            "size": self.size,
            "shape": self.shape,
        }[attribute]

    def attribute_value(self, attribute: str) -> str:
        return ATTRIBUTE_VALUES[attribute][self.attribute_index(attribute)]


@dataclass
class Scene:
    id: str
    objects: list[SceneObject] = field(default_factory=list)


@dataclass(frozen=True)
class DetectedObject:
    """Detector output: class id in 1..96 plus (x_min, y_min, width, height)."""

    class_id: int
    bbox: tuple[float, float, float, float]


def class_id_of(color: int, material: int, size: int, shape: int) -> int:
    """Class id in 1..96: lexicographic rank of (color, material, size, shape)
    with shape varying fastest."""
    if not (
        0 <= color < len(COLORS)
        and 0 <= material < len(MATERIALS)
        and 0 <= size < len(SIZES)
        and 0 <= shape < len(SHAPES)
    ):
        raise IndexError(
            f"attribute index out of range: ({color}, {material}, {size}, {shape})"
        )
    return 1 + ((color * len(MATERIALS) + material) * len(SIZES) + size) * len(SHAPES) + shape


def attrs_of_class_id(class_id: int) -> tuple[int, int, int, int]:
    """Inverse of class_id_of."""
    if not 1 <= class_id <= N_CLASSES:
        raise ValueError(f"class id must be in 1..{N_CLASSES}, got {class_id}")
    rank = class_id - 1
    rank, shape = divmod(rank, len(SHAPES))
    rank, size = divmod(rank, len(SIZES))
    color, material = divmod(rank, len(MATERIALS))
    return color, material, size, shape


@dataclass(frozen=True)
class BoxGeometry:
    """Analytic bounding-box rule: per-(shape, size) base extents in pixels,
    scaled by clamp(ref_depth / depth, min_scale, max_scale). Boxes are
    self-consistent ground truth; the same rule generates and scores them."""

    small_extent: float = 24.0
    large_extent: float = 44.0
    cylinder_width_factor: float = 0.9
    ref_depth: float = 12.0
    min_scale: float = 0.5
    max_scale: float = 2.0


DEFAULT_BOX_GEOMETRY = BoxGeometry()


def bbox_of(
    obj: SceneObject, geometry: BoxGeometry = DEFAULT_BOX_GEOMETRY
) -> tuple[float, float, float, float]:
    """Axis-aligned box centered on the object's pixel position, clipped to
    the image rectangle. Returns (x_min, y_min, width, height)."""
    depth = obj.pos3d[2]
    scale = geometry.ref_depth / depth if depth > 0 else geometry.max_scale
    scale = min(max(scale, geometry.min_scale), geometry.max_scale)
    extent = (geometry.large_extent if obj.size == 1 else geometry.small_extent) * scale
    width = extent * (geometry.cylinder_width_factor if SHAPES[obj.shape] == "cylinder" else 1.0)
    height = extent
    x_min = max(obj.x - width / 2.0, 0.0)
    y_min = max(obj.y - height / 2.0, 0.0)
    x_max = min(obj.x + width / 2.0, float(IMAGE_WIDTH))
    y_max = min(obj.y + height / 2.0, float(IMAGE_HEIGHT))
    return x_min, y_min, x_max - x_min, y_max - y_min


def ground_truth_detections(
    scene: Scene, geometry: BoxGeometry = DEFAULT_BOX_GEOMETRY
) -> list[DetectedObject]:
    return [
        DetectedObject(
            class_id=class_id_of(o.color, o.material, o.size, o.shape),
            bbox=bbox_of(o, geometry),
        )
        for o in scene.objects
    ]


def validate_scene(
    scene: Scene,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    n_max: int = DEFAULT_N_MAX,
) -> list[str]:
    """Check every scene invariant; returns one message per violation
    (empty list means the scene is valid)."""
    violations: list[str] = []
    if not 1 <= len(scene.objects) <= n_max:
        violations.append(
            f"scene {scene.id}: object count {len(scene.objects)} outside 1..{n_max}"
        )
    for i, obj in enumerate(scene.objects):
        for attr in ATTRIBUTE_NAMES:
            idx = obj.attribute_index(attr)
            if not 0 <= idx < len(ATTRIBUTE_VALUES[attr]):
                violations.append(f"object {i}: {attr} index {idx} out of range")
        if not 0 <= obj.x < IMAGE_WIDTH:
            violations.append(f"object {i}: x={obj.x} outside [0, {IMAGE_WIDTH})")
        if not 0 <= obj.y < IMAGE_HEIGHT:
            violations.append(f"object {i}: y={obj.y} outside [0, {IMAGE_HEIGHT})")
    for i in range(len(scene.objects)):
        for j in range(i + 1, len(scene.objects)):
            a, b = scene.objects[i], scene.objects[j]
            dist = np.hypot(a.x - b.x, a.y - b.y)
            if dist < min_separation:
                violations.append(
                    f"objects {i} and {j}: separation {dist:.1f} < {min_separation}"
                )
    return violations


# ---------------------------------------------------------------------------
# JSON wire format


def scene_to_dict(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "objects": [
            {
                "color": COLORS[o.color],
                "material": MATERIALS[o.material],
                "size": SIZES[o.size],
                "shape": SHAPES[o.shape],
                "pixel_coords": [o.x, o.y],
                "3d_coords": list(o.pos3d),
                "rotation": o.rotation,
            }
            for o in scene.objects
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    objects = [
        SceneObject(
            color=COLORS.index(item["color"]),
            material=MATERIALS.index(item["material"]),
            size=SIZES.index(item["size"]),
            shape=SHAPES.index(item["shape"]),
            x=int(item["pixel_coords"][0]),
            y=int(item["pixel_coords"][1]),
            pos3d=tuple(item["3d_coords"]),
            rotation=float(item["rotation"]),
        )
        for item in data["objects"]
    ]
    return Scene(id=data["id"], objects=objects)
