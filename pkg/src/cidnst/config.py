"""Run configuration: a JSON document mapped onto nested dataclasses.

Unknown keys are rejected with their full key path. ``config_hash`` is the
SHA-256 of the canonical JSON form (the generation count is excluded so a
finished run can be extended).
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from cidnst.augment import AugmentConfig
from cidnst.data import SynthConfig
from cidnst.decode import DecodeConfig
from cidnst.lm import LMConfig
from cidnst.schedules import POLICY_KINDS, AlphaSchedule, BetaPolicy, parse_recipe


class ConfigKeyError(ValueError):
    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}")


@dataclass
class ModelDims:
    hidden: int = 32
    subsample: int = 4
    dec_units: int = 64
    att_dim: int = 32
    emb_dim: int = 32


@dataclass
class TrainerConfig:
    epochs_sup: int = 12
    epochs_cid: int = 12
    epochs_student: int = 12
    lr: float = 2e-3
    batch_size: int = 16
    text_batch_size: int = 32
    ctc_weight: float = 0.3
    grad_clip: float = 5.0
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class CIDSettings:
    alpha: str = "decay"  # "decay" or "fixed:<v>"
    alpha_start: float = 0.9
    alpha_hold_epochs: int = 3
    alpha_floor: float = 0.1
    policy: str = "min"  # fixed | min | max | avg | med
    beta: float = 0.5  # for policy "fixed"
    mmd_bandwidth: typing.Union[str, float] = "median"

    def schedule(self, total_epochs: int) -> AlphaSchedule:
        return AlphaSchedule.parse(
            self.alpha,
            start=self.alpha_start,
            hold_epochs=min(self.alpha_hold_epochs, max(total_epochs - 1, 0)),
            floor=self.alpha_floor,
            total_epochs=max(total_epochs, 1),
        )

    def beta_policy(self) -> BetaPolicy:
        return BetaPolicy(self.policy, self.beta)


@dataclass
class RunConfig:
    name: str = "demo"
    seed: int = 0
    mode: str = "cnst"  # "nst" | "cnst"
    generations: int = 3
    warm_start: bool = False
    corpus: typing.Optional[str] = None  # path to a saved corpus; synthesized when None
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: ModelDims = field(default_factory=ModelDims)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    cid: CIDSettings = field(default_factory=CIDSettings)
    lm: LMConfig = field(default_factory=LMConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def validate(self):
        if self.mode not in ("nst", "cnst"):
            raise ConfigKeyError("mode", f"must be 'nst' or 'cnst', got {self.mode!r}")
        if self.generations < 0:
            raise ConfigKeyError("generations", "must be >= 0")
        if self.cid.policy not in POLICY_KINDS:
            raise ConfigKeyError("cid.policy", f"must be one of {POLICY_KINDS}")
        try:
            self.cid.schedule(max(self.trainer.epochs_cid, 1))
            self.cid.beta_policy()
        except ValueError as e:
            raise ConfigKeyError("cid", str(e)) from None
        for k in ("epochs_sup", "epochs_cid", "epochs_student"):
            if getattr(self.trainer, k) < 0:
                raise ConfigKeyError(f"trainer.{k}", "must be >= 0")
        if not 0.0 <= self.trainer.ctc_weight <= 1.0:
            raise ConfigKeyError("trainer.ctc_weight", "must lie in [0, 1]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("generations")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigKeyError(path or "<root>", f"expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        kp = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigKeyError(kp, "unknown key")
        typ = hints[key]
        if dataclasses.is_dataclass(typ):
            kwargs[key] = _build(typ, val, kp)
        else:
            kwargs[key] = _coerce(typ, val, kp)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigKeyError(path or "<root>", str(e)) from None


def _coerce(typ, val, path):
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        for t in typing.get_args(typ):
            if t is type(None) and val is None:
                return None
            try:
                return _coerce(t, val, path)
            except ConfigKeyError:
                continue
        raise ConfigKeyError(path, f"value {val!r} does not match {typ}")
    if typ is bool:
        if not isinstance(val, bool):
            raise ConfigKeyError(path, f"expected a boolean, got {val!r}")
        return val
    if typ is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigKeyError(path, f"expected an integer, got {val!r}")
        return val
    if typ is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigKeyError(path, f"expected a number, got {val!r}")
        return float(val)
    if typ is str:
        if not isinstance(val, str):
            raise ConfigKeyError(path, f"expected a string, got {val!r}")
        return val
    return val


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    recipe = data.pop("recipe", None)
    cfg = _build(RunConfig, data, "")
    if recipe is not None:
        try:
            alpha, policy = parse_recipe(recipe)
        except ValueError as e:
            raise ConfigKeyError("recipe", str(e)) from None
        cfg.cid.alpha, cfg.cid.policy = alpha, policy
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigKeyError("<root>", f"invalid JSON: {e}") from None
    return config_from_dict(data)


def save_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
