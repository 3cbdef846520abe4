"""Run configuration: strict JSON parsing with defaults and echo round-trip.

Unknown keys are rejected with the dotted path of the offending key;
omitted keys fall back to the training-procedure defaults (lr0=1e-3,
weight decay 1e-5, batch 32, 1000 epochs, patience 20, q=0.95). The
fully resolved config is echoed into the run directory and parses back
to an identical configuration.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import IsolationForestConfig
from .errors import ConfigError
from .models import EncoderSpec
from .rng import RNG_ALGORITHM
from .training import Hyperparameters


@dataclass
class SplitConfig:
    ratio: float = 0.8
    seed: int = 0


@dataclass
class PcaConfig:
    n_components: int | float | None = None
    theta_var: float = 0.95
    standardize: bool = False


@dataclass
class BaselinesConfig:
    iforest: IsolationForestConfig = field(default_factory=IsolationForestConfig)
    pca: PcaConfig = field(default_factory=PcaConfig)


@dataclass
class EvaluationConfig:
    q: float = 0.95
    n_bins: int = 100


@dataclass
class SvddConfig:
    eps_c: float = 0.1
    no_bias: bool = False


@dataclass
class RunConfig:
    dataset: str | None = None
    output_dir: str = "runs"
    split: SplitConfig = field(default_factory=SplitConfig)
    model: EncoderSpec = field(default_factory=EncoderSpec)
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)
    svdd: SvddConfig = field(default_factory=SvddConfig)
    baselines: BaselinesConfig = field(default_factory=BaselinesConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    rng_algorithm: str = RNG_ALGORITHM

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "output_dir": self.output_dir,
            "split": {"ratio": self.split.ratio, "seed": self.split.seed},
            "model": {
                "dims": list(self.model.dims),
                "variant": self.model.variant,
                "latent_dropout": self.model.latent_dropout,
                "linear_output": self.model.linear_output,
                "allow_custom_latent": self.model.allow_custom_latent,
                "elu_alpha": self.model.elu_alpha,
                "dropout_rate": self.model.dropout_rate,
            },
            "hyperparameters": {
                "lr0": self.hyperparameters.lr0,
                "weight_decay": self.hyperparameters.weight_decay,
                "lr_min": self.hyperparameters.lr_min,
                "batch_size": self.hyperparameters.batch_size,
                "max_epochs": self.hyperparameters.max_epochs,
                "patience": self.hyperparameters.patience,
                "beta1": self.hyperparameters.beta1,
                "beta2": self.hyperparameters.beta2,
                "adam_eps": self.hyperparameters.adam_eps,
                "seed": self.hyperparameters.seed,
            },
            "svdd": {"eps_c": self.svdd.eps_c, "no_bias": self.svdd.no_bias},
            "baselines": {
                "iforest": {
                    "n_trees": self.baselines.iforest.n_trees,
                    "subsample_size": self.baselines.iforest.subsample_size,
                    "seed": self.baselines.iforest.seed,
                },
                "pca": {
                    "n_components": self.baselines.pca.n_components,
                    "theta_var": self.baselines.pca.theta_var,
                    "standardize": self.baselines.pca.standardize,
                },
            },
            "evaluation": {"q": self.evaluation.q, "n_bins": self.evaluation.n_bins},
            "rng_algorithm": self.rng_algorithm,
        }

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]

    def override_seeds(self, seed: int) -> None:
        """Single master seed for smoke tests (split, training, forest)."""
        self.split.seed = int(seed)
        self.hyperparameters.seed = int(seed)
        self.baselines.iforest.seed = int(seed)


_SCHEMA = {
    "dataset": (str, type(None)),
    "output_dir": (str,),
    "split": {"ratio": (float, int), "seed": (int,)},
    "model": {
        "dims": (list,),
        "variant": (str,),
        "latent_dropout": (bool,),
        "linear_output": (bool,),
        "allow_custom_latent": (bool,),
        "elu_alpha": (float, int),
        "dropout_rate": (float, int),
    },
    "hyperparameters": {
        "lr0": (float, int),
        "weight_decay": (float, int),
        "lr_min": (float, int),
        "batch_size": (int,),
        "max_epochs": (int,),
        "patience": (int,),
        "beta1": (float, int),
        "beta2": (float, int),
        "adam_eps": (float, int),
        "seed": (int,),
    },
    "svdd": {"eps_c": (float, int), "no_bias": (bool,)},
    "baselines": {
        "iforest": {"n_trees": (int,), "subsample_size": (int,), "seed": (int,)},
        "pca": {
            "n_components": (int, float, type(None)),
            "theta_var": (float, int),
            "standardize": (bool,),
        },
    },
    "evaluation": {"q": (float, int), "n_bins": (int,)},
    "rng_algorithm": (str,),
}


def _check_keys(doc: dict, schema: dict, path: str) -> None:
    for key, value in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key: {where}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            _check_keys(value, expected, where)
        else:
            if isinstance(value, bool) and bool not in expected:
                raise ConfigError(f"{where}: invalid type bool")
            if not isinstance(value, expected):
                names = "/".join(t.__name__ for t in expected)
                raise ConfigError(f"{where}: expected {names}, got {type(value).__name__}")


def config_from_dict(doc: dict, base_dir: Path | None = None) -> RunConfig:
    """Build a validated RunConfig from a plain dict, filling defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, _SCHEMA, "")

    def section(name):
        return doc.get(name, {}) or {}

    try:
        cfg = RunConfig(
            dataset=doc.get("dataset"),
            output_dir=doc.get("output_dir", "runs"),
            split=SplitConfig(**section("split")),
            model=EncoderSpec(**section("model")),
            hyperparameters=Hyperparameters(**section("hyperparameters")),
            svdd=SvddConfig(**section("svdd")),
            baselines=BaselinesConfig(
                iforest=IsolationForestConfig(**section("baselines").get("iforest", {})),
                pca=PcaConfig(**section("baselines").get("pca", {})),
            ),
            evaluation=EvaluationConfig(**section("evaluation")),
            rng_algorithm=doc.get("rng_algorithm", RNG_ALGORITHM),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    if not 0.0 < cfg.split.ratio < 1.0:
        raise ConfigError(f"split.ratio: must lie in (0, 1), got {cfg.split.ratio}")
    if not 0.0 < cfg.evaluation.q < 1.0:
        raise ConfigError(f"evaluation.q: must lie in (0, 1), got {cfg.evaluation.q}")
    if cfg.evaluation.n_bins < 1:
        raise ConfigError(f"evaluation.n_bins: must be >= 1, got {cfg.evaluation.n_bins}")
    if cfg.baselines.iforest.n_trees < 1:
        raise ConfigError(f"baselines.iforest.n_trees: must be >= 1, got {cfg.baselines.iforest.n_trees}")
    if cfg.baselines.iforest.subsample_size < 2:
        raise ConfigError(
            f"baselines.iforest.subsample_size: must be >= 2, got {cfg.baselines.iforest.subsample_size}"
        )
    if not 0.0 < cfg.baselines.pca.theta_var <= 1.0:
        raise ConfigError(f"baselines.pca.theta_var: must lie in (0, 1], got {cfg.baselines.pca.theta_var}")
    if cfg.rng_algorithm != RNG_ALGORITHM:
        raise ConfigError(f"rng_algorithm: this implementation provides {RNG_ALGORITHM!r}")

    if cfg.dataset is not None:
        dataset_path = Path(cfg.dataset)
        if base_dir is not None and not dataset_path.is_absolute():
            dataset_path = (base_dir / dataset_path).resolve()
        if not dataset_path.exists():
            raise ConfigError(f"dataset: path {dataset_path} does not exist")
        cfg.dataset = str(dataset_path)
    return cfg


def parse_config(path) -> RunConfig:
    """Parse and validate a UTF-8 JSON config file."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    return config_from_dict(doc, base_dir=path.resolve().parent)


def echo_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
