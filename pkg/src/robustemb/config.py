"""Experiment configuration: one flat key-value file for a whole pipeline.

Keys (all optional, defaults in brackets)::

    seed                      global seed [0]; every stream derives from it
    paths.embeddings          training embedding file (word v1 ... vD)
    paths.counterfitted       counter-fitted vectors defining synonyms
    paths.data_dir            directory with train.tsv and test.tsv
    paths.out_dir             output directory [out]
    paths.synonyms            synonym dictionary [<out_dir>/synonyms.tsv]
    paths.init_embedding      optional embedding snapshot to start from
    data.dev_fraction         share of train.tsv held out as dev [0.1]
    synonym.{k,delta,p}       synonym sets [8, 0.5, 2]
    loss.{p,variant,tau,epsilon_guard,cap_numerator,avg_mode}
    train.{mode,beta,epochs,batch_size,optimizer,lr,adam_beta1,adam_beta2,
           adam_eps,negative_resample,negative_pool,alpha_mode,alpha_ratio,
           alpha_value,alpha_vocab,batch_metric_mode,hidden_dim,max_len,eval_anchors}
    attack.{kind,epsilon,max_queries,trials,sample_size}

The margin is not a ``loss.`` key; it comes from ``train.alpha_*``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .attack import AttackConfig
from .kvconfig import ConfigError, build_dataclass, dump_dataclass, known_keys, read_kv
from .losses import LossConfig
from .synonyms import SynonymConfig
from .trainer import TrainConfig


@dataclass
class Paths:
    embeddings: str = ""
    counterfitted: str = ""
    data_dir: str = ""
    out_dir: str = "out"
    synonyms: str = ""
    init_embedding: str = ""

    def synonyms_path(self) -> Path:
        return Path(self.synonyms) if self.synonyms else Path(self.out_dir) / "synonyms.tsv"


@dataclass
class DataConfig:
    dev_fraction: float = 0.1


@dataclass
class ExperimentConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    data: DataConfig = field(default_factory=DataConfig)
    synonym: SynonymConfig = field(default_factory=SynonymConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)

    def require(self, *names: str) -> None:
        """Check that the named path keys are set and exist on disk."""
        for name in names:
            value = getattr(self.paths, name) if name != "synonyms" else str(self.paths.synonyms_path())
            if not value:
                raise ConfigError(f"paths.{name} is not set")
            if not Path(value).exists():
                raise ConfigError(f"paths.{name} does not exist: {value}")

    def lines(self) -> list[str]:
        out = [f"seed = {self.seed}"]
        out += dump_dataclass(self.paths, "paths")
        out += dump_dataclass(self.data, "data")
        out += dump_dataclass(self.synonym, "synonym")
        out += [ln for ln in dump_dataclass(self.loss, "loss") if not ln.startswith("loss.alpha ")]
        out += [ln for ln in dump_dataclass(self.train, "train") if not ln.startswith(("train.loss ", "train.seed "))]
        out += [ln for ln in dump_dataclass(self.attack, "attack") if not ln.startswith("attack.seed ")]
        return out


_SECTIONS = {
    "paths": Paths,
    "data": DataConfig,
    "synonym": SynonymConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "attack": AttackConfig,
}


def all_keys() -> set[str]:
    keys = {"seed"}
    for prefix, cls in _SECTIONS.items():
        keys |= known_keys(cls, prefix)
    keys -= {"loss.alpha", "train.loss", "train.seed", "attack.seed"}
    return keys


def build_config(values: dict[str, str]) -> ExperimentConfig:
    """Build and validate an :class:`ExperimentConfig` from string key-values."""
    unknown = sorted(set(values) - all_keys())
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        seed = int(values.get("seed", "0"))
    except ValueError:
        raise ConfigError(f"seed: {values['seed']!r} is not an integer") from None
    paths = build_dataclass(Paths, values, "paths")
    data = build_dataclass(DataConfig, values, "data")
    if not 0 <= data.dev_fraction < 1:
        raise ConfigError("data.dev_fraction must lie in [0, 1)")
    synonym = build_dataclass(SynonymConfig, values, "synonym")
    loss = build_dataclass(LossConfig, values, "loss")
    train_values = {k: v for k, v in values.items() if k.startswith("train.")}
    train = build_dataclass(TrainConfig, train_values, "train")
    try:
        train = dataclasses.replace(train, loss=loss, seed=seed)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from None
    attack = dataclasses.replace(build_dataclass(AttackConfig, values, "attack"), seed=seed)
    return ExperimentConfig(seed, paths, data, synonym, train.loss, train, attack)


def load_config(path: str | None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    values = read_kv(path) if path else {}
    if path:
        # relative paths in the file are relative to the file itself
        base = Path(path).resolve().parent
        for key in ("paths.embeddings", "paths.counterfitted", "paths.data_dir", "paths.out_dir",
                    "paths.synonyms", "paths.init_embedding"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(base / values[key])
    values.update(overrides or {})
    return build_config(values)
