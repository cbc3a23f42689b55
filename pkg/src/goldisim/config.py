"""INI run configuration: one section per module, unknown keys rejected."""

from __future__ import annotations

import configparser
import copy
from pathlib import Path
from typing import Any, Optional

from .compositor import SimParams
from .errors import ConfigError, GoldisimError
from .training import OptimizerConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    s = s.strip()
    return tuple(float(v) for v in s.replace(",", " ").split()) if s else ()


def _str(s: str) -> str:
    return s.strip()


PATH = "path"

# section -> key -> (parser, default); PATH values resolve against the config file
SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "run": {"seed": (int, 0), "output_dir": (PATH, None), "threads": (int, 0)},
    "data": {
        "normals_dir": (PATH, None),
        "val_annotations": (PATH, None),
        "val_holdout": (int, 0),
        "train_annotations": (PATH, None),
        "canvas": (int, 256),
    },
    "simulator": {
        "persistence": (float, 0.5),
        "lacunarity": (float, 2.0),
        "res": (int, 3),
        "alpha": (float, 0.5),
        "beta": (float, 0.5),
        "uniform": (_bool, False),
        "lesions_per_image": (int, 1),
    },
    "optimizer": {
        "kind": (_str, "nvrm_sgd"),
        "learning_rate": (float, 0.0002),
        "batch_size": (int, 64),
        "epochs": (int, None),
        "variability_scale_b": (float, 0.01),
    },
    "curriculum": {
        "strategy": (_str, "gdr"),
        "target_k": (float, 0.5),
        "pacing_schedule": (_floats, ()),
        "T": (int, 10),
        "n_init": (int, 5),
        "bo_iter": (int, None),
        "probe_normals": (int, 30),
        "replay_previous": (_bool, False),
        "n_candidates": (int, 1000),
    },
    "detector": {"init_checkpoint": (PATH, None), "pretrain_normals": (int, 0)},
}

GDR_EPOCHS = 40
BATCH_EPOCHS = 120  # udr / bayrn / plain train
GDR_BO_ITER = 35
BAYRN_BO_ITER = 40


class RunConfig:
    def __init__(self, values: Optional[dict] = None, base_dir: Optional[Path] = None):
        self.values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        self.base_dir = Path(base_dir) if base_dir else Path.cwd()
        for section, kv in (values or {}).items():
            for key, val in kv.items():
                self.set(section, key, val)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"{path}: config file not found")
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str  # keep "T"
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from e
        cfg = cls(base_dir=path.resolve().parent)
        for section in cp.sections():
            for key, raw in cp.items(section):
                cfg.set_text(section, key, raw, cfg.base_dir)
        return cfg

    def _spec(self, section: str, key: str):
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        return SCHEMA[section][key][0]

    def set_text(self, section: str, key: str, raw: str, base: Optional[Path] = None) -> None:
        """Parse ``raw`` by the schema; relative paths resolve against ``base``."""
        parser = self._spec(section, key)
        raw = raw.strip()
        if parser is PATH:
            if raw == "":
                self.values[section][key] = None
                return
            p = Path(raw).expanduser()
            self.values[section][key] = (p if p.is_absolute() else (base or Path.cwd()) / p).resolve()
            return
        try:
            self.values[section][key] = parser(raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {section}.{key}: {raw!r} ({e})") from e

    def set(self, section: str, key: str, value) -> None:
        parser = self._spec(section, key)
        if isinstance(value, str):
            self.set_text(section, key, value, self.base_dir)
        elif parser is PATH:
            self.values[section][key] = None if value is None else Path(value).resolve()
        else:
            self.values[section][key] = value

    def override(self, dotted: str, raw: str) -> None:
        """Apply ``section.key=value`` from the command line (paths relative to cwd)."""
        if "." not in dotted:
            raise ConfigError(f"override must look like section.key=value, got {dotted!r}")
        section, key = dotted.split(".", 1)
        self.set_text(section, key, raw, Path.cwd())

    def get(self, section: str, key: str):
        self._spec(section, key)
        return self.values[section][key]

    def copy(self) -> "RunConfig":
        out = RunConfig(base_dir=self.base_dir)
        out.values = copy.deepcopy(self.values)
        return out

    # --- builders -----------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    def sim_params(self) -> SimParams:
        s = self.values["simulator"]
        try:
            return SimParams(s["persistence"], s["lacunarity"], s["res"], s["alpha"], s["beta"])
        except GoldisimError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad simulator settings: {e}") from e

    def optimizer(self, strategy: Optional[str] = None) -> OptimizerConfig:
        o = self.values["optimizer"]
        epochs = o["epochs"]
        if epochs is None:
            epochs = GDR_EPOCHS if strategy in ("gdr", "easy2hard") else BATCH_EPOCHS
        return OptimizerConfig(o["kind"], o["learning_rate"], o["batch_size"], epochs,
                               o["variability_scale_b"], self.seed)

    def curriculum(self, strategy: Optional[str] = None):
        from .curriculum import CurriculumConfig

        c = self.values["curriculum"]
        strategy = strategy or c["strategy"]
        bo_iter = c["bo_iter"]
        if bo_iter is None:
            bo_iter = BAYRN_BO_ITER if strategy == "bayrn" else GDR_BO_ITER
        return CurriculumConfig(
            strategy=strategy, target_k=c["target_k"], pacing_schedule=c["pacing_schedule"], T=c["T"],
            n_init=c["n_init"], bo_iter=bo_iter, probe_normals=c["probe_normals"],
            replay_previous=c["replay_previous"], seed=self.seed, optimizer=self.optimizer(strategy),
            lesions_per_image=self.values["simulator"]["lesions_per_image"], n_candidates=c["n_candidates"],
        )

    def to_dict(self) -> dict:
        out = {}
        for section, kv in self.values.items():
            out[section] = {}
            for key, val in kv.items():
                if isinstance(val, Path):
                    val = str(val)
                elif isinstance(val, tuple):
                    val = list(val)
                out[section][key] = val
        return out

    def to_ini(self) -> str:
        lines = []
        for section, kv in self.to_dict().items():
            lines.append(f"[{section}]")
            for key, val in kv.items():
                if val is None:
                    continue
                if isinstance(val, list):
                    val = ", ".join(repr(v) for v in val)
                elif isinstance(val, bool):
                    val = "true" if val else "false"
                elif isinstance(val, float):
                    val = repr(val)
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)
