"""Run configuration files: strict JSON schema, defaults, overrides.

Unknown keys are fatal (a silently ignored typo in a hyperparameter would
corrupt ablations). Defaults carry the recommended recipe: Huber alpha
0.005, aux weight 10, EMA factor 0.3, prune percent 10 every 5 epochs,
10 ECE bins, SGD at lr 0.1 with momentum 0.9 and weight decay 5e-4.
"""

import copy
import json
import os

from .data import generate_gaussian_mixture, load_csv, load_idx_pair, stratified_split
from .losses import AuxSpec, LossSpec
from .pruning import PruneSchedule
from .trainer import TrainConfig

OUTPUT_DIR_ENV = "CALPRUNE_OUTPUT_DIR"


class ConfigError(ValueError):
    """A config file problem, always naming the offending key."""


DEFAULTS = {
    "dataset": {
        "source": "gaussian_mixture",
        "classes": 2,
        "train_per_class": 500,
        "test_per_class": 250,
        "noise": 0.0,
        "seed": 0,
        "train_fraction": 0.9,
        "images": None,
        "labels": None,
        "test_images": None,
        "test_labels": None,
        "path": None,
        "test_path": None,
        "label_column": None,
    },
    "model": {"hidden": [64, 64]},
    "train": {
        "max_epochs": 60,
        "batch_size": 128,
        "learning_rate": 0.1,
        "lr_milestones": [80, 120],
        "lr_decay_factor": 0.1,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "seed": 1,
    },
    "loss": {
        "kind": "flsd",
        "gamma": 3.0,
        "smoothing": 0.0,
        "aux": {"kind": "huber", "alpha": 0.005, "weight": 10.0},
    },
    "prune": {
        "enabled": False,
        "percent": 10.0,
        "ema_factor": 0.3,
        "interval": 5,
        "epochs": None,
        "warmup_epochs": None,
    },
    "eval": {"bins": 10, "deltas": [0.95, 0.99]},
    "output_dir": "runs/out",
}

# keys each dataset source may set beyond "source"; everything else is a typo
_SOURCE_KEYS = {
    "gaussian_mixture": {"classes", "train_per_class", "test_per_class", "noise",
                         "seed", "train_fraction"},
    "idx_pair": {"images", "labels", "test_images", "test_labels", "seed",
                 "train_fraction"},
    "csv": {"path", "test_path", "label_column", "classes", "seed", "train_fraction"},
}
_SOURCE_REQUIRED = {
    "gaussian_mixture": set(),
    "idx_pair": {"images", "labels", "test_images", "test_labels"},
    "csv": {"path", "test_path", "label_column"},
}


def _merge_strict(defaults, user, prefix=""):
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key: {path}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if value is None:
                merged[key] = None
            elif not isinstance(value, dict):
                raise ConfigError(f"config key {path} must be an object")
            else:
                merged[key] = _merge_strict(defaults[key], value, prefix=path + ".")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_config(user):
    """Merge a user config dict over the documented defaults, strictly."""
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = _merge_strict(DEFAULTS, user)
    source = cfg["dataset"]["source"]
    if source not in _SOURCE_KEYS:
        raise ConfigError(f"unknown config value: dataset.source={source!r}")
    user_dataset_keys = set(user.get("dataset", {})) - {"source"}
    stray = user_dataset_keys - _SOURCE_KEYS[source]
    if stray:
        raise ConfigError(
            f"config key dataset.{sorted(stray)[0]} does not apply to source {source!r}")
    missing = _SOURCE_REQUIRED[source] - {k for k in user_dataset_keys
                                          if cfg["dataset"][k] is not None}
    if missing:
        raise ConfigError(
            f"dataset source {source!r} requires config key dataset.{sorted(missing)[0]}")
    return cfg


def load_config(path, overrides=(), env=None):
    """Read a JSON config file, apply the output-dir env var, then --set overrides."""
    try:
        with open(path) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    env = os.environ if env is None else env
    if env.get(OUTPUT_DIR_ENV):
        user["output_dir"] = env[OUTPUT_DIR_ENV]
    for assignment in overrides:
        user = _apply_override(user, assignment)
    return resolve_config(user)


def _apply_override(user, assignment):
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key.path=value")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = user
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r} descends through a non-object")
    node[keys[-1]] = value
    return user


# ---- builders ---------------------------------------------------------------

def build_datasets(cfg):
    """(train ScoredDataset, validation, test) per the dataset section."""
    d = cfg["dataset"]
    if d["source"] == "gaussian_mixture":
        pool = generate_gaussian_mixture(d["classes"], d["train_per_class"],
                                         noise=d["noise"], seed=[d["seed"], 0])
        test = generate_gaussian_mixture(d["classes"], d["test_per_class"],
                                         noise=d["noise"], seed=[d["seed"], 1])
    elif d["source"] == "idx_pair":
        pool = load_idx_pair(d["images"], d["labels"])
        test = load_idx_pair(d["test_images"], d["test_labels"])
    else:
        pool = load_csv(d["path"], d["label_column"], n_classes=d["classes"])
        test = load_csv(d["test_path"], d["label_column"], n_classes=pool.n_classes)
    train, val = stratified_split(pool, d["train_fraction"], seed=[d["seed"], 2])
    return train, val, test


def build_loss_spec(cfg):
    loss = cfg["loss"]
    aux = None
    if loss["aux"] is not None:
        aux = AuxSpec(kind=loss["aux"]["kind"], alpha=loss["aux"]["alpha"],
                      weight=loss["aux"]["weight"])
    return LossSpec(kind=loss["kind"], gamma=loss["gamma"],
                    smoothing=loss["smoothing"], aux=aux)


def build_prune_schedule(cfg):
    p = cfg["prune"]
    if p is None or not p["enabled"]:
        return None
    warmup = p["warmup_epochs"]
    if warmup is None:
        milestones = cfg["train"]["lr_milestones"]
        warmup = min(milestones) if milestones else 0
    # an explicit epoch set wins over the interval default
    interval = None if p["epochs"] is not None else p["interval"]
    epochs = frozenset(p["epochs"]) if p["epochs"] is not None else None
    return PruneSchedule(percent=p["percent"], ema_factor=p["ema_factor"],
                         interval=interval, epochs=epochs, warmup_epochs=warmup)


def build_train_config(cfg):
    t = cfg["train"]
    return TrainConfig(
        max_epochs=t["max_epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        lr_milestones=list(t["lr_milestones"]),
        lr_decay_factor=t["lr_decay_factor"],
        momentum=t["momentum"],
        weight_decay=t["weight_decay"],
        seed=t["seed"],
        loss=build_loss_spec(cfg),
        prune=build_prune_schedule(cfg),
        eval_deltas=list(cfg["eval"]["deltas"]),
        n_bins=cfg["eval"]["bins"],
    )


def model_widths(cfg, input_dim, n_classes):
    hidden = cfg["model"]["hidden"]
    if any(int(h) < 1 for h in hidden):
        raise ConfigError("config key model.hidden must hold positive layer sizes")
    return [input_dim, *[int(h) for h in hidden], n_classes]
