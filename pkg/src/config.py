# src/config.py
"""
Run configuration: one YAML document per run, validated section by section.
Unknown keys are rejected at every level.
"""
from __future__ import annotations

import copy
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field

from .dsp_frontend import FrontendConfig
from .models import PHONETIC_MODES, ModelSpec
from .settings import DATA
from .synth_data import ExperimentConfig
from .tdnn import TdnnConfig
from .training import TrainConfig

logger = logging.getLogger(__name__)

COMMANDS = ("synth", "featurize", "train-phonetic", "train-lid", "score", "eval", "augment", "slice", "gradcheck",
            "compare")


class ConfigError(ValueError):
    pass


class PhoneticConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    tdnn: TdnnConfig = Field(default_factory=TdnnConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    # train on target-language data or on the foreign pool (transfer condition)
    pool: Literal["target", "foreign"] = "target"


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    data_dir: Path = DATA["RAW"] / "synth"
    features_dir: Path = DATA["INTERIM"] / "feats"
    phonetic_out: Path = DATA["PROC"] / "phonetic.ptnm"
    model_out: Path = DATA["PROC"] / "lid.ptnm"
    # model scored by `score` (defaults to model_out)
    model_in: Optional[Path] = None
    scores_dir: Path = DATA["PROC"] / "scores"
    eval_dir: Path = DATA["PROC"] / "eval"


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    p_target: float = Field(0.5, gt=0.0, lt=1.0)
    clean_condition: str = "clean"
    plot: bool = False


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    frontend: FrontendConfig = Field(default_factory=FrontendConfig)
    model: ModelSpec = Field(default_factory=ModelSpec)
    phonetic: PhoneticConfig = Field(default_factory=PhoneticConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @property
    def scored_model(self) -> Path:
        return self.paths.model_in or self.paths.model_out


# ------------------------------------------------------------
# Loading
# ------------------------------------------------------------

def read_yaml(path: Path | str) -> Dict[str, Any]:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"Arquivo de configuração não encontrado: {path}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path.name}: YAML inválido ({e})") from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path.name}: o documento precisa ser um mapeamento chave/valor")
    return raw


def apply_override(raw: Dict[str, Any], assignment: str) -> Dict[str, Any]:
    """`section.key=value` with value parsed as a YAML scalar/flow value."""
    if "=" not in assignment:
        raise ConfigError(f"--set espera chave=valor; recebi '{assignment}'")
    dotted, text = assignment.split("=", 1)
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"--set sem chave: '{assignment}'")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"--set {dotted}: valor inválido ({e})") from e
    node = raw
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"--set {dotted}: '{key}' não é uma seção")
        node = child
    node[keys[-1]] = value
    return raw


def apply_seed(raw: Dict[str, Any], seed: int) -> Dict[str, Any]:
    """One seed for every random stream of the run."""
    raw["seed"] = seed
    for section in ("train", "experiment"):
        raw.setdefault(section, {})["seed"] = seed
    raw.setdefault("phonetic", {}).setdefault("train", {})["seed"] = seed
    return raw


def load_run_config(path: Optional[Path | str] = None, overrides: Iterable[str] = (),
                    seed: Optional[int] = None) -> RunConfig:
    raw = read_yaml(path) if path is not None else {}
    raw = copy.deepcopy(raw)
    for assignment in overrides:
        apply_override(raw, assignment)
    if seed is not None:
        apply_seed(raw, seed)
    return RunConfig.model_validate(raw)


def validate_for_command(cfg: RunConfig, command: str) -> None:
    """Checks that depend on the subcommand (inputs that must already exist)."""
    if command not in COMMANDS:
        raise ConfigError(f"Comando desconhecido: {command}")
    manifest = cfg.paths.data_dir / "manifest.tsv"
    if command in ("featurize", "augment", "slice", "train-phonetic", "train-lid", "score") \
            and not manifest.exists():
        raise ConfigError(f"{command}: manifest não encontrado em {manifest} (rode `synth` antes)")
    if command in ("train-phonetic", "train-lid", "score") and not cfg.paths.features_dir.exists():
        raise ConfigError(f"{command}: features não encontradas em {cfg.paths.features_dir} (rode `featurize`)")
    if command == "train-lid" and cfg.model.input_mode in PHONETIC_MODES:
        if not Path(cfg.model.phonetic_dnn).exists():
            raise ConfigError(f"train-lid: rede fonética {cfg.model.phonetic_dnn} não encontrada")
    if command == "score" and not cfg.scored_model.exists():
        raise ConfigError(f"score: modelo {cfg.scored_model} não encontrado")
    if command == "eval" and not (cfg.paths.scores_dir / f"utt_{cfg.eval.clean_condition}.tsv").exists():
        raise ConfigError(f"eval: scores não encontrados em {cfg.paths.scores_dir} (rode `score`)")
    logger.debug("Configuração válida para %s", command)
