"""Run configuration file: INI sections whose keys are the dataclass field
names. Unknown sections or keys are errors."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .gcl import GclConfig
from .numerics import DomainError
from .sampler import SamplerSpec
from .trainer import TrainConfig

EXAMPLE = """\
# Paths are resolved relative to the working directory.
[data]
train = data/train.csv
test = data/test.csv
# optional; inferred from the largest training label when omitted
num_classes = 10

[train]
stage1_iters = 3000      # representation + classifier, instance-balanced batches
stage2_iters = 500       # classifier re-training, backbone frozen
lr = 0.1
momentum = 0.9
milestones = 0.6, 0.8    # fractions of each stage where lr is multiplied by lr_decay
lr_decay = 0.1
batch_size = 64
seed = 0
loss = gcl               # gcl | ce
classifier = cosine      # cosine | linear (linear only with loss = ce)
hidden = 64, 64
embedding_dim = 16
mixup_stage1 = false
mixup_stage2 = false
mixup_alpha = 1.0
reinit_classifier = false

[gcl]
scale = 30.0
noise_mean = 0.0
noise_std = 0.3333333333333333
clamp_lo = -1.0
clamp_hi = 1.0
strategy = log-diff      # log-diff | pow-diff | cosine | zero
pow_exponent = 0.25

[sampler]
strategy = CBEN          # IB | CB | EN | CBEN
a = 0.999
b = 0.0009
en_beta = 0.999

[eval]
many_threshold = 100     # classes with more training samples are "many"
few_threshold = 20       # classes with fewer training samples are "few"
"""


class ConfigError(ValueError):
    pass


@dataclass
class DataPaths:
    train: str
    test: str
    num_classes: int | None = None


@dataclass
class EvalThresholds:
    many_threshold: int = 100
    few_threshold: int = 20


@dataclass
class RunConfig:
    data: DataPaths
    train: TrainConfig
    eval: EvalThresholds = field(default_factory=EvalThresholds)
    text: str = ""


def _convert(section: str, key: str, raw: str, ftype):
    where = f"[{section}] {key}"
    t = str(ftype)
    try:
        if "bool" in t:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "tuple[int" in t:
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if "tuple[float" in t:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if "int" in t:
            return int(raw)
        if "float" in t:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {t}") from None


def _section(cp, name: str, cls, skip=()):
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name not in skip}
    kwargs = {}
    if cp.has_section(name):
        for key, raw in cp.items(name):
            if key not in fields:
                raise ConfigError(f"[{name}] {key}: unknown key")
            kwargs[key] = _convert(name, key, raw, fields[key].type)
    return kwargs


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e).splitlines()[0]) from None
    known = {"data", "train", "gcl", "sampler", "eval"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"[{s}]: unknown section")
    if not cp.has_section("data"):
        raise ConfigError("[data]: section missing")
    data_kw = _section(cp, "data", DataPaths)
    for key in ("train", "test"):
        if key not in data_kw:
            raise ConfigError(f"[data] {key}: required")
    try:
        gcl = GclConfig(**_section(cp, "gcl", GclConfig))
    except DomainError as e:
        raise ConfigError(f"[gcl]: {e}") from None
    try:
        sampler = SamplerSpec(**_section(cp, "sampler", SamplerSpec))
    except DomainError as e:
        raise ConfigError(f"[sampler]: {e}") from None
    try:
        train = TrainConfig(gcl=gcl, sampler=sampler,
                            **_section(cp, "train", TrainConfig, skip=("gcl", "sampler")))
    except DomainError as e:
        raise ConfigError(f"[train]: {e}") from None
    return RunConfig(DataPaths(**data_kw), train, EvalThresholds(**_section(cp, "eval", EvalThresholds)),
                     text)
