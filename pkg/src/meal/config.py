"""Flat ``key = value`` experiment configuration.

One setting per line, keys namespaced with dots::

    strategy = random, entropy, meal
    seeds = 0, 1, 2
    al.query_size = 32
    umap.n_neighbors = 15

Blank lines and ``#`` comments are ignored. Every key is checked against
a fixed schema; any problem raises :class:`ConfigError` naming the key.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

from meal.data import PALETTE, PatchGrid, SceneSpec
from meal.harness import DataConfig, ExperimentConfig
from meal.manifold import UmapConfig
from meal.model import TrainConfig
from meal.strategies import STRATEGIES, AcquisitionConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    return float(text)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    if not text:
        raise ValueError("empty value")
    return text


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in _split(text))


def _strategy_list(text: str) -> tuple[str, ...]:
    names = tuple(_split(text))
    for name in names:
        if name not in STRATEGIES:
            raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
    if len(set(names)) != len(names):
        raise ValueError("strategy listed twice")
    return names


def _split(text: str) -> list[str]:
    parts = [t.strip() for t in text.split(",")]
    if not parts or any(not p for p in parts):
        raise ValueError(f"expected a comma-separated list, got {text!r}")
    return parts


# key -> (parser, type name shown in errors)
SCHEMA: dict[str, tuple[Callable[[str], object], str]] = {
    "strategy": (_strategy_list, "strategy list"),
    "seeds": (_int_list, "integer list"),
    "output": (_str, "path"),
    "data.source": (_str, "'synthetic' or manifest path"),
    "data.images": (_int, "integer"),
    "data.height": (_int, "integer"),
    "data.width": (_int, "integer"),
    "data.classes": (_int, "integer"),
    "data.seed": (_int, "integer"),
    "data.rare_weight": (_float, "real"),
    "data.noise": (_float, "real"),
    "data.shape_density": (_float, "real"),
    "data.val_fraction": (_float, "real"),
    "grid.rows": (_int, "integer"),
    "grid.cols": (_int, "integer"),
    "al.query_size": (_int, "integer"),
    "al.informative_size": (_int, "integer"),
    "al.steps": (_int, "integer"),
    "al.init_patches": (_int, "integer"),
    "train.epochs": (_int, "integer"),
    "train.batch_size": (_int, "integer"),
    "train.learning_rate": (_float, "real"),
    "umap.n_neighbors": (_int, "integer"),
    "umap.out_dim": (_int, "integer"),
    "umap.min_dist": (_float, "real"),
    "umap.n_epochs": (_int, "integer"),
    "umap.negative_samples": (_int, "integer"),
    "umap.learning_rate": (_float, "real"),
    "umap.parallel": (_bool, "boolean"),
}


@dataclass(frozen=True)
class RunPlan:
    """Parsed configuration: one experiment per listed strategy."""

    experiments: tuple[ExperimentConfig, ...]
    values: dict

    @property
    def strategies(self) -> tuple[str, ...]:
        return tuple(e.acquisition.strategy for e in self.experiments)


def parse_lines(text: str, origin: str = "<config>") -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        if key in values:
            raise ConfigError(key, "set more than once")
        parser, kind = SCHEMA[key]
        try:
            values[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(key, f"expected {kind}, got {value!r} ({exc})") from None
    return values


def _checked(key: str, build: Callable[[], object]):
    try:
        return build()
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def _positive(values: dict, *keys: str) -> None:
    for key in keys:
        if key in values and values[key] <= 0:
            raise ConfigError(key, f"must be positive, got {values[key]}")


def build(values: dict) -> RunPlan:
    """Turn parsed key/values into validated experiment configs."""
    v = values
    _positive(
        v, "data.images", "data.height", "data.width", "grid.rows", "grid.cols",
        "al.query_size", "al.steps", "al.init_patches", "train.epochs", "train.batch_size",
        "train.learning_rate", "umap.n_neighbors", "umap.out_dim", "umap.n_epochs", "umap.learning_rate",
    )

    base_scene = SceneSpec()
    scene_kw = {}
    for key, name in [
        ("data.height", "height"), ("data.width", "width"), ("data.classes", "n_classes"),
        ("data.rare_weight", "rare_weight"), ("data.noise", "noise"),
        ("data.shape_density", "shape_density"),
    ]:
        if key in v:
            scene_kw[name] = v[key]
    grid = PatchGrid(rows=v.get("grid.rows", 4), cols=v.get("grid.cols", 4))
    scene = replace(base_scene, grid_rows=v.get("grid.rows", 4), grid_cols=v.get("grid.cols", 4), **scene_kw)
    source = v.get("data.source", "synthetic")
    if "data.classes" in v and v["data.classes"] < 2:
        raise ConfigError("data.classes", f"need at least 2 classes, got {v['data.classes']}")
    if source == "synthetic":
        if scene.n_classes - 1 > len(PALETTE):
            raise ConfigError("data.classes", f"at most {len(PALETTE) + 1} synthetic classes supported")
        if scene.height % grid.rows:
            raise ConfigError("grid.rows", f"image height {scene.height} is not divisible by {grid.rows}")
        if scene.width % grid.cols:
            raise ConfigError("grid.cols", f"image width {scene.width} is not divisible by {grid.cols}")
        if scene.noise < 0:
            raise ConfigError("data.noise", f"must be non-negative, got {scene.noise}")
        if scene.shape_density <= 0:
            raise ConfigError("data.shape_density", f"must be positive, got {scene.shape_density}")
        if scene.rare_weight < 0:
            raise ConfigError("data.rare_weight", f"must be non-negative, got {scene.rare_weight}")
        _checked("data", scene.validate)

    if source == "synthetic" and v.get("data.images", 2) < 2:
        raise ConfigError("data.images", "need at least 2 synthetic images (train + validation)")
    data = _checked(
        "data.val_fraction",
        lambda: DataConfig(
            source=source,
            n_images=v.get("data.images", DataConfig.n_images),
            seed=v.get("data.seed", 0),
            scene=scene,
            n_classes=v.get("data.classes") if source != "synthetic" else None,
            val_fraction=v.get("data.val_fraction", DataConfig.val_fraction),
        ),
    )

    train = _checked("train", lambda: TrainConfig(
        epochs=v.get("train.epochs", TrainConfig.epochs),
        batch_size=v.get("train.batch_size", TrainConfig.batch_size),
        learning_rate=v.get("train.learning_rate", TrainConfig.learning_rate),
    ))
    if v.get("umap.n_neighbors", 2) < 2:
        raise ConfigError("umap.n_neighbors", f"must be >= 2, got {v['umap.n_neighbors']}")
    if v.get("umap.min_dist", 1.0) <= 0:
        raise ConfigError("umap.min_dist", f"must be positive, got {v['umap.min_dist']}")
    if v.get("umap.negative_samples", 0) < 0:
        raise ConfigError("umap.negative_samples", f"must be non-negative, got {v['umap.negative_samples']}")
    umap_kw = {k.split(".", 1)[1]: val for k, val in v.items() if k.startswith("umap.")}
    umap = _checked("umap", lambda: UmapConfig(**umap_kw))

    seeds = v.get("seeds", (0, 1, 2))
    if not seeds:
        raise ConfigError("seeds", "must list at least one seed")

    n_query = v.get("al.query_size", AcquisitionConfig.query_size)
    n_inf = v.get("al.informative_size", AcquisitionConfig.informative_size)
    n_init = v.get("al.init_patches", AcquisitionConfig.init_patches)
    strategies = v.get("strategy", ("meal",))
    if any(s in ("meal", "meal_ft") for s in strategies) and n_inf < n_query:
        raise ConfigError(
            "al.informative_size",
            f"must be >= al.query_size for meal strategies ({n_inf} < {n_query})",
        )
    if source == "synthetic":
        n_val = min(data.n_images - 1, max(1, int(round(data.val_fraction * data.n_images))))
        pool_size = (data.n_images - n_val) * grid.rows * grid.cols
        if n_init > pool_size:
            raise ConfigError("al.init_patches", f"{n_init} exceeds the {pool_size} training patches")

    experiments = []
    for strategy in strategies:
        acq = _checked("strategy", lambda: AcquisitionConfig(
            strategy=strategy,
            query_size=n_query,
            informative_size=n_inf,
            steps=v.get("al.steps", AcquisitionConfig.steps),
            init_patches=n_init,
        ))
        experiments.append(
            ExperimentConfig(data=data, grid=grid, acquisition=acq, train=train, umap=umap,
                             seeds=seeds, output=v.get("output"))
        )
    return RunPlan(tuple(experiments), dict(v))


def parse_config(text: str, origin: str = "<config>") -> RunPlan:
    return build(parse_lines(text, origin))


def load_config(path) -> RunPlan:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {p}: {exc.strerror}") from None
    values = parse_lines(text, str(p))
    src = values.get("data.source")
    if src is not None and src != "synthetic" and not Path(src).is_absolute():
        # manifest paths are relative to the config file
        values["data.source"] = str(p.parent / src)
    return build(values)
