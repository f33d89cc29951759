"""Ablation grids over fusion mode, input feature set and attention values.

A grid maps config keys to candidate values; every cell of the Cartesian
product is trained on the same synthetic split and reported as one row.
"""

from __future__ import annotations

import itertools
from dataclasses import replace
from pathlib import Path

from .config import build, parse_pairs
from .errors import ConfigError
from .model import ModelConfig
from .pipeline import fit, generate_records, needle_accuracy, score
from .data import make_instances
from .synthetic import SyntheticTaskSpec, generate_synthetic
from .training import TrainConfig

# cumulative feature sets, as in a feature ablation of the basic model
FEATURE_SETS = {
    "dialogue": dict(use_caption=False, use_dialogue=True, use_vggish=False, use_i3d=False),
    "dialogue+caption": dict(use_caption=True, use_dialogue=True, use_vggish=False, use_i3d=False),
    "dialogue+caption+vggish": dict(use_caption=True, use_dialogue=True, use_vggish=True, use_i3d=False),
    "dialogue+caption+vggish+i3d": dict(use_caption=True, use_dialogue=True, use_vggish=True,
                                        use_i3d=True),
}
ATTENTION_SETS = ("vggish", "caption", "dialogue", "all")
FUSION_SET = ("prod", "sum", "concat", "weight")

NAMED_GRIDS = {
    "fusion": {"fusion": list(FUSION_SET)},
    "features": {"features": list(FEATURE_SETS)},
    "attention": {"attention_values": list(ATTENTION_SETS)},
    "full": {"fusion": list(FUSION_SET), "features": list(FEATURE_SETS),
             "attention_values": list(ATTENTION_SETS)},
}
# fixed settings per named grid (attention rows need the attention decoder)
GRID_BASE = {"attention": {"decoder": "attention"}, "full": {"decoder": "attention"}}


def load_grid(name_or_path: str) -> tuple[dict[str, list[str]], dict[str, str]]:
    """A named grid, or a file of ``key = v1, v2, ...`` lines."""
    if name_or_path in NAMED_GRIDS:
        return ({k: list(v) for k, v in NAMED_GRIDS[name_or_path].items()},
                dict(GRID_BASE.get(name_or_path, {})))
    path = Path(name_or_path)
    if not path.exists():
        raise ConfigError(f"unknown grid {name_or_path!r}: not one of {sorted(NAMED_GRIDS)} "
                          "and no such file")
    pairs = parse_pairs(path.read_text(encoding="utf-8"), str(path))
    grid = {k: [v.strip() for v in raw.split(",") if v.strip()] for k, raw in pairs.items()}
    for k, vals in grid.items():
        if not vals:
            raise ConfigError(f"grid key {k!r} has no values")
    return grid, {}


def cells(grid: dict[str, list[str]]) -> list[dict[str, str]]:
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cell_configs(cell: dict[str, str], base_model: ModelConfig, base_train: TrainConfig,
                 fixed: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    settings = dict(fixed)
    settings.update(cell)
    feature = settings.pop("features", None)
    model_keys, train_keys = ModelConfig.field_names(), TrainConfig.field_names()
    unknown = sorted(k for k in settings if k not in model_keys and k not in train_keys)
    if unknown:
        raise ConfigError(f"unknown grid keys: {', '.join(unknown)}")
    mc = build(ModelConfig, {k: v for k, v in settings.items() if k in model_keys}, base_model)
    tc = build(TrainConfig, {k: v for k, v in settings.items() if k in train_keys}, base_train)
    if feature is not None:
        if feature not in FEATURE_SETS:
            raise ConfigError(f"unknown feature set {feature!r}; choose from {list(FEATURE_SETS)}")
        mc = replace(mc, **FEATURE_SETS[feature])
    return mc, tc


def run_grid(grid: dict[str, list[str]], fixed: dict[str, str], spec: SyntheticTaskSpec,
             base_model: ModelConfig, base_train: TrainConfig, n_train: int, n_dev: int,
             beam_size: int = 1) -> list[dict]:
    """Train and score every cell; invalid combinations become rows with an error note."""
    train = generate_synthetic(spec, n_train)
    dev = generate_synthetic(spec, n_dev, offset=n_train)
    dev_inst = make_instances(dev)
    rows = []
    for cell in cells(grid):
        row: dict = dict(cell)
        try:
            mc, tc = cell_configs(cell, base_model, base_train, fixed)
            mc.validate()
            trained = fit(mc, tc, train, dev, revision=False)
            row.update(score(generate_records(trained, dev_inst, beam_size=beam_size)))
            row["accuracy"] = needle_accuracy(trained.model, trained.vocab, dev_inst)
            row["status"] = "ok"
        except ConfigError as e:
            row["status"] = f"invalid: {e}"
        rows.append(row)
    return rows


def format_rows(rows: list[dict], keys: list[str]) -> str:
    metric_cols = ["bleu1", "bleu4", "rouge_l", "cider", "accuracy"]
    header = keys + metric_cols + ["status"]
    table = [header]
    for r in rows:
        line = [str(r.get(k, "")) for k in keys]
        line += [f"{r[m]:.4f}" if m in r else "-" for m in metric_cols]
        line.append("ok" if r.get("status") == "ok" else str(r.get("status", "")))
        table.append(line)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table) + "\n"
