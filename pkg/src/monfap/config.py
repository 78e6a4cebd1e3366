"""Run configuration stored as flat ``section.key = value`` text."""

import dataclasses
from dataclasses import dataclass, field, fields

from .model import ModelConfig
from .synth import PERTURB_FAMILIES, SceneConfig


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending dotted key."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class LossConfig:
    lam: float = 10.0


@dataclass
class OptimConfig:
    learning_rate: float = 6e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    poly_power: float = 0.9
    iterations: int = 200
    batch_size: int = 8
    hflip: bool = True
    log_every: int = 10
    checkpoint_every: int = 100


@dataclass
class DataConfig:
    root: str = "data"
    height: int = 64
    width: int = 64
    n_train: int = 64
    n_val: int = 16
    n_test: int = 32
    min_faces: int = 2
    max_faces: int = 6
    tamper_prob: float = 0.5
    fake_ratio: float = 0.5


@dataclass
class EvalConfig:
    split: str = "test"
    perturb_intensity: float = 0.5
    perturb_families: tuple = PERTURB_FAMILIES
    average: str = "micro"


@dataclass
class RunSection:
    seed: int = 0
    checkpoint: str = "monfap.pt"
    deterministic: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunSection = field(default_factory=RunSection)

    def scene_config(self):
        d = self.data
        return SceneConfig(
            height=d.height,
            width=d.width,
            min_faces=d.min_faces,
            max_faces=d.max_faces,
            tamper_prob=d.tamper_prob,
            fake_ratio=d.fake_ratio,
        )

    def estimator_params(self):
        o = self.optim
        return {
            **dataclasses.asdict(self.model),
            "lam": self.loss.lam,
            "learning_rate": o.learning_rate,
            "beta1": o.beta1,
            "beta2": o.beta2,
            "weight_decay": o.weight_decay,
            "poly_power": o.poly_power,
            "max_iter": o.iterations,
            "batch_size": o.batch_size,
            "hflip": o.hflip,
            "log_every": o.log_every,
            "random_state": self.run.seed,
        }

    def validate(self):
        _check(self.data.height % 32 == 0 and self.data.height >= 32, "data.height",
               f"must be a positive multiple of 32, got {self.data.height}")
        _check(self.data.width % 32 == 0 and self.data.width >= 32, "data.width",
               f"must be a positive multiple of 32, got {self.data.width}")
        for name in ("n_train", "n_val", "n_test"):
            _check(getattr(self.data, name) >= 0, f"data.{name}", "must be >= 0")
        _check(1 <= self.data.min_faces <= self.data.max_faces, "data.min_faces",
               "must satisfy 1 <= min_faces <= max_faces")
        for name in ("tamper_prob", "fake_ratio"):
            _check(0 <= getattr(self.data, name) <= 1, f"data.{name}", "must lie in [0, 1]")
        m = self.model
        _check(m.base_channels >= 1, "model.base_channels", "must be >= 1")
        _check(1 <= m.top_k <= 4, "model.top_k", f"must lie in [1, 4], got {m.top_k}")
        _check(m.w_im >= 0, "model.w_im", "must be >= 0")
        _check(0 <= m.theta <= 1, "model.theta", "must lie in [0, 1]")
        _check(0 <= m.mask_threshold <= 1, "model.mask_threshold", "must lie in [0, 1]")
        _check(m.heads >= 0, "model.heads", "must be >= 0")
        _check(self.loss.lam > 0, "loss.lam", "must be > 0")
        o = self.optim
        _check(o.learning_rate > 0, "optim.learning_rate", "must be > 0")
        _check(0 <= o.beta1 < 1, "optim.beta1", "must lie in [0, 1)")
        _check(0 <= o.beta2 < 1, "optim.beta2", "must lie in [0, 1)")
        _check(o.weight_decay >= 0, "optim.weight_decay", "must be >= 0")
        _check(o.poly_power >= 0, "optim.poly_power", "must be >= 0")
        _check(o.iterations >= 1, "optim.iterations", "must be >= 1")
        _check(o.batch_size >= 1, "optim.batch_size", "must be >= 1")
        _check(o.log_every >= 1, "optim.log_every", "must be >= 1")
        _check(o.checkpoint_every >= 1, "optim.checkpoint_every", "must be >= 1")
        _check(self.eval.split in ("train", "val", "test"), "eval.split",
               f"must be train, val or test, got {self.eval.split!r}")
        _check(0 <= self.eval.perturb_intensity <= 1, "eval.perturb_intensity", "must lie in [0, 1]")
        unknown = set(self.eval.perturb_families) - set(PERTURB_FAMILIES)
        _check(not unknown and self.eval.perturb_families, "eval.perturb_families",
               f"must be a non-empty subset of {','.join(PERTURB_FAMILIES)}")
        _check(self.eval.average in ("micro", "macro"), "eval.average", "must be micro or macro")
        return self


def _check(ok, name, message):
    if not ok:
        raise ConfigError(name, message)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, default, name):
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(part.strip() for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r} as {type(default).__name__}") from None
    return text


def dumps(config):
    lines = []
    for section in fields(config):
        obj = getattr(config, section.name)
        for f in fields(obj):
            lines.append(f"{section.name}.{f.name} = {_format(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def loads(text, base=None):
    """Parse config text over ``base`` (defaults when omitted). Unknown keys are errors."""
    config = dataclasses.replace(base) if base is not None else RunConfig()
    sections = {s.name: dataclasses.replace(getattr(config, s.name)) for s in fields(config)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(key, "keys must be dotted as section.key")
        section, name = key.split(".", 1)
        if section not in sections:
            raise ConfigError(key, f"unknown section {section!r}")
        obj = sections[section]
        if name not in {f.name for f in fields(obj)}:
            raise ConfigError(key, "unknown key")
        setattr(obj, name, _parse(value, getattr(obj, name), key))
    return RunConfig(**sections)


def load(path):
    with open(path) as fh:
        return loads(fh.read())


def save(config, path):
    with open(path, "w") as fh:
        fh.write(dumps(config))
