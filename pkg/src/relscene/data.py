"""Dataset generation and file IO.

A dataset directory holds one scenes file and one questions file per split,
a shared word dictionary, and a manifest tying them together. Every file
embeds the seed and config hash that produced it, and generation is
sequential and seed-derived, so identical inputs give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoders import QuestionDict
from .scene import Scene, scene_from_dict, scene_to_dict
from .synth import (
    FAMILIES,
    AnswerBalancer,
    GenerationError,
    QASample,
    QuestionGenConfig,
    SceneGenConfig,
    generate_question,
    generate_scene,
    sample_from_dict,
    sample_to_dict,
)

FORMAT_VERSION = 1

# stable per-split tags for deriving independent RNG streams
_SPLIT_TAGS = {"train": 0, "val": 1, "test": 2}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash_of(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class DatasetConfig:
    train_scenes: int = 4000
    val_scenes: int = 1000
    test_scenes: int = 0
    questions_per_scene: int = 5
    seed: int = 0
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    question: QuestionGenConfig = field(default_factory=QuestionGenConfig)

    def split_sizes(self) -> dict[str, int]:
        sizes = {"train": self.train_scenes, "val": self.val_scenes}
        if self.test_scenes:
            sizes["test"] = self.test_scenes
        return sizes


@dataclass
class SplitData:
    scenes: dict[str, Scene]
    samples: list[QASample]

    def pairs(self) -> list[tuple[Scene, QASample]]:
        return [(self.scenes[s.scene_id], s) for s in self.samples]


@dataclass
class Dataset:
    manifest: dict
    qdict: QuestionDict
    splits: dict[str, SplitData]

    @property
    def config_hash(self) -> str:
        return self.manifest["config_hash"]

    @property
    def seed(self) -> int:
        return self.manifest["seed"]


def _generate_split(
    cfg: DatasetConfig, split: str, n_scenes: int
) -> tuple[list[Scene], list[QASample]]:
    scenes: list[Scene] = []
    samples: list[QASample] = []
    balancer = AnswerBalancer(cfg.question.answer_cap, cfg.question.binary_answer_cap)
    tag = _SPLIT_TAGS[split]
    qps = cfg.questions_per_scene
    for i in range(n_scenes):
        rng = np.random.default_rng([cfg.seed, tag, i])
        scene = generate_scene(rng, cfg.scene, scene_id=f"{split}_{i:06d}")
        scenes.append(scene)
        for k in range(qps):
            base = (i * qps + k) % len(FAMILIES)
            sample = None
            # some scenes cannot host every family (attribute twins defeat the
            # uniqueness requirement); fall through to the next family, and
            # drop the balance cap before giving up on a family entirely
            for offset in range(len(FAMILIES)):
                family = FAMILIES[(base + offset) % len(FAMILIES)]
                try:
                    sample = generate_question(rng, scene, family, cfg.question, balancer)
                    break
                except GenerationError:
                    try:
                        sample = generate_question(rng, scene, family, cfg.question, None)
                        balancer.record(family, sample.answer)
                        break
                    except GenerationError:
                        continue
            if sample is None:
                raise GenerationError(f"no family fits scene {scene.id}")
            samples.append(sample)
    return scenes, samples


def generate_dataset(cfg: DatasetConfig, out_dir: str | Path) -> Dataset:
    """Generate all splits and write the dataset directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash_of(asdict(cfg))
    info = {"seed": cfg.seed, "config_hash": chash, "format_version": FORMAT_VERSION}

    split_payload: dict[str, tuple[list[Scene], list[QASample]]] = {}
    for split, n in cfg.split_sizes().items():
        split_payload[split] = _generate_split(cfg, split, n)

    qdict = QuestionDict.from_corpus(
        s.question_tokens for _, samples in split_payload.values() for s in samples
    )
    qdict.save(out / "dict.txt")

    manifest = {
        **info,
        "dictionary_file": "dict.txt",
        "generation": asdict(cfg),
        "splits": {},
    }
    for split, (scenes, samples) in split_payload.items():
        scene_file = f"{split}_scenes.json"
        question_file = f"{split}_questions.json"
        _dump_json(out / scene_file, {"info": info, "scenes": [scene_to_dict(s) for s in scenes]})
        _dump_json(
            out / question_file,
            {"info": info, "questions": [sample_to_dict(s) for s in samples]},
        )
        manifest["splits"][split] = {
            "scene_file": scene_file,
            "question_file": question_file,
            "n_scenes": len(scenes),
            "n_questions": len(samples),
        }
    _dump_json(out / "manifest.json", manifest)
    return load_dataset(out)


def _dump_json(path: Path, obj) -> None:
    path.write_text(canonical_json(obj) + "\n", encoding="utf-8")


def load_dataset(root: str | Path) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    qdict = QuestionDict.load(root / manifest["dictionary_file"])
    splits = {}
    for split, files in manifest["splits"].items():
        scenes_doc = json.loads((root / files["scene_file"]).read_text(encoding="utf-8"))
        questions_doc = json.loads(
            (root / files["question_file"]).read_text(encoding="utf-8")
        )
        scenes = {}
        for item in scenes_doc["scenes"]:
            scene = scene_from_dict(item)
            scenes[scene.id] = scene
        samples = [sample_from_dict(item) for item in questions_doc["questions"]]
        splits[split] = SplitData(scenes=scenes, samples=samples)
    return Dataset(manifest=manifest, qdict=qdict, splits=splits)
