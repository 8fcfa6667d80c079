"""Run configuration: YAML/JSON loading, validation, overrides and snapshots.

Precedence, lowest to highest: built-in defaults, config file, command-line flags.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from pairjudge.backend import BackendConfig, BackendConfigError
from pairjudge.dataset import TaskKind
from pairjudge.prompts import VERDICT_TOKENS, InstructionSet, JudgePromptTemplate, PromptError

logger = logging.getLogger(__name__)

DEMO = "demo"
REQUIRED_KEYS = ("datasets", "backends", "target_model", "judge_model")
KNOWN_KEYS = set(REQUIRED_KEYS) | {
    "models", "instructions", "judge_template", "seed", "parallelism", "output_dir",
    "cache_dir", "cache", "metadata",
}
BACKEND_KEYS = set(BackendConfig.__dataclass_fields__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    path: str
    task: TaskKind
    subsample: int | None = None

    def to_dict(self) -> dict:
        return {"name": self.name, "path": self.path, "task": self.task.value, "subsample": self.subsample}


@dataclass(frozen=True)
class RunConfig:
    datasets: tuple[DatasetSpec, ...]
    models: tuple[BackendConfig, ...]
    target_model: str
    judge: BackendConfig
    instructions: InstructionSet = field(default_factory=InstructionSet)
    judge_template: JudgePromptTemplate = field(default_factory=JudgePromptTemplate)
    seed: int = 0
    parallelism: int = 4
    output_dir: str = "runs/default"
    cache_dir: str | None = None
    cache: bool = True

    @property
    def judge_model(self) -> str:
        return self.judge.name

    @property
    def model_names(self) -> list[str]:
        return [m.name for m in self.models]

    @property
    def resolved_cache_dir(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    def backend(self, name: str) -> BackendConfig:
        for b in (*self.models, self.judge):
            if b.name == name:
                return b
        raise KeyError(name)

    def to_dict(self) -> dict:
        """Every setting made explicit; loadable again with :func:`load_config`."""
        backends = [m.to_dict() for m in self.models]
        if self.judge.name not in self.model_names:
            backends.append(self.judge.to_dict())
        return {
            "datasets": [d.to_dict() for d in self.datasets],
            "backends": backends,
            "models": self.model_names,
            "target_model": self.target_model,
            "judge_model": self.judge_model,
            "instructions": {
                "t_q": self.instructions.t_q,
                "t_a": self.instructions.t_a,
                "t_d": self.instructions.t_d,
                "separator": self.instructions.separator,
            },
            "judge_template": {
                "rubric": self.judge_template.rubric,
                "body": self.judge_template.body,
                "verdict_protocol": self.judge_template.verdict_protocol,
            },
            "seed": self.seed,
            "parallelism": self.parallelism,
            "output_dir": self.output_dir,
            "cache_dir": str(self.resolved_cache_dir),
            "cache": self.cache,
            "metadata": {
                "verdict_tokens": {"first": VERDICT_TOKENS["A"], "second": VERDICT_TOKENS["B"],
                                   "tie": VERDICT_TOKENS["C"]},
                "judge_sees_source_text": True,
                "judge_temperature": self.judge.temperature,
                "agreement_f1": "macro over classes present",
            },
        }


def _backend_from_dict(raw: dict) -> BackendConfig:
    if not isinstance(raw, dict):
        raise ConfigError("each backend must be a mapping")
    unknown = sorted(set(raw) - BACKEND_KEYS)
    if unknown:
        raise ConfigError(f"backend {raw.get('name')!r}: unknown key {unknown[0]!r}")
    for key in ("name", "model_id"):
        if key not in raw:
            raise ConfigError(f"backend is missing required key {key!r}")
    try:
        return BackendConfig(**raw)
    except (BackendConfigError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def parse_config(raw: dict, base_dir: str | Path = ".") -> RunConfig:
    """Validate a config mapping. Relative dataset paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    for key in REQUIRED_KEYS:
        if key not in raw or raw[key] in (None, "", []):
            raise ConfigError(f"missing required key {key!r}")
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    base_dir = Path(base_dir)

    datasets = []
    for entry in raw["datasets"]:
        for key in ("path", "task"):
            if key not in entry:
                raise ConfigError(f"dataset entry is missing required key {key!r}")
        path = Path(entry["path"])
        if not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise ConfigError(f"dataset path does not exist: {path}")
        try:
            task = TaskKind.parse(entry["task"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        k = entry.get("subsample")
        datasets.append(DatasetSpec(entry.get("name") or path.stem, str(path.resolve()), task,
                                    int(k) if k is not None else None))
    names = [d.name for d in datasets]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate dataset names")

    backends = [_backend_from_dict(b) for b in raw["backends"]]
    by_name: dict[str, BackendConfig] = {}
    for b in backends:
        if b.name in by_name:
            raise ConfigError(f"duplicate backend name {b.name!r}")
        by_name[b.name] = b

    judge_name = raw["judge_model"]
    if judge_name not in by_name:
        raise ConfigError(f"judge_model {judge_name!r} is not a configured backend")
    model_names = raw.get("models") or [n for n in by_name if n != judge_name]
    if isinstance(model_names, str):
        model_names = [m.strip() for m in model_names.split(",") if m.strip()]
    if len(set(model_names)) != len(model_names):
        raise ConfigError("duplicate names in models")
    for name in model_names:
        if name not in by_name:
            raise ConfigError(f"model {name!r} is not a configured backend")
    target = raw["target_model"]
    if target not in model_names:
        raise ConfigError(f"target_model {target!r} is not among the evaluated models")
    if len(model_names) < 2:
        raise ConfigError("at least one candidate model besides the target is required")
    judge = by_name[judge_name]
    if judge_name in model_names or any(by_name[m].model_id == judge.model_id for m in model_names):
        logger.warning("judge %r is also one of the evaluated models", judge_name)

    try:
        instructions = InstructionSet(**(raw.get("instructions") or {}))
        template = JudgePromptTemplate(**(raw.get("judge_template") or {}))
    except (PromptError, TypeError) as exc:
        raise ConfigError(str(exc)) from None

    parallelism = int(raw.get("parallelism", 4))
    if parallelism < 1:
        raise ConfigError("parallelism must be a positive integer")
    return RunConfig(
        datasets=tuple(datasets),
        models=tuple(by_name[m] for m in model_names),
        target_model=target,
        judge=judge,
        instructions=instructions,
        judge_template=template,
        seed=int(raw.get("seed", 0)),
        parallelism=parallelism,
        output_dir=str(raw.get("output_dir") or "runs/default"),
        cache_dir=raw.get("cache_dir"),
        cache=bool(raw.get("cache", True)),
    )


def apply_overrides(raw: dict, overrides: dict) -> dict:
    raw = dict(raw)
    if overrides.get("dataset"):
        if not overrides.get("task"):
            raise ConfigError("--dataset requires --task")
        path = Path(overrides["dataset"])
        raw["datasets"] = [{"name": path.stem, "path": str(path.resolve()), "task": overrides["task"]}]
    if overrides.get("models"):
        raw["models"] = [m.strip() for m in overrides["models"].split(",") if m.strip()]
    for flag, key in (("target_model", "target_model"), ("judge_model", "judge_model"), ("seed", "seed"),
                      ("parallelism", "parallelism"), ("cache_dir", "cache_dir"), ("out", "output_dir")):
        if overrides.get(flag) is not None:
            raw[key] = overrides[flag]
    return raw


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Load a YAML or JSON config file, or the built-in ``demo`` profile."""
    overrides = overrides or {}
    if str(path) == DEMO:
        from pairjudge.demo import demo_config_dict

        out = overrides.get("out") or "runs/demo"
        raw = demo_config_dict(Path(out))
        base_dir = Path(".")
    else:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                raw = yaml.safe_load(fh)
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from None
        base_dir = path.parent
    return parse_config(apply_overrides(raw or {}, overrides), base_dir)


def write_snapshot(config: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, ensure_ascii=False, sort_keys=True)
        fh.write("\n")
