"""Run configuration: every hyper-parameter of a training run.

Config files are plain text, one ``key = value`` per line with ``#``
comments; keys are dotted for grouping.  Absent keys take the documented
defaults, unknown keys are rejected with the offending line number, and
``parse_config(render_config(cfg)) == cfg`` holds exactly.
"""

import dataclasses


@dataclasses.dataclass
class RunConfig:
    regime: str = "ss"
    seed: int = 0
    batch_size: int = 4
    total_epochs: int = 40
    warm_start_epochs: int = 2
    lr_base: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    head_lr_scale: float = 10.0
    use_unlabeled: bool = True
    features: int = 16
    embed_dim: int = 16
    ema_momentum: float = 0.999
    tau: float = 0.5
    xi1: float = 1.0
    xi2: float = 0.1
    lambda_c: float = 0.1
    eta: float = 1.0
    eps_floor: float = 1e-4
    alpha0: float = 0.2
    proto_momentum: float = 0.999
    delta_p: float = 0.3
    r_l: int = 3
    r_h: int = 20
    num_anchors: int = 256
    num_negatives: int = 50
    bank_capacity_fg: int = 512
    bank_capacity_bg: int = 1024
    negative_mode: str = "unreliable"
    max_push: int = 1024
    beta: float = 0.7


# dotted config key -> (dataclass field, type)
SCHEMA = {
    "regime": ("regime", str),
    "seed": ("seed", int),
    "train.batch_size": ("batch_size", int),
    "train.total_epochs": ("total_epochs", int),
    "train.warm_start_epochs": ("warm_start_epochs", int),
    "train.lr_base": ("lr_base", float),
    "train.momentum": ("momentum", float),
    "train.weight_decay": ("weight_decay", float),
    "train.head_lr_scale": ("head_lr_scale", float),
    "train.use_unlabeled": ("use_unlabeled", bool),
    "model.features": ("features", int),
    "model.embed_dim": ("embed_dim", int),
    "model.ema_momentum": ("ema_momentum", float),
    "loss.tau": ("tau", float),
    "loss.xi1": ("xi1", float),
    "loss.xi2": ("xi2", float),
    "loss.lambda_c": ("lambda_c", float),
    "loss.eta": ("eta", float),
    "loss.eps_floor": ("eps_floor", float),
    "pseudo.alpha0": ("alpha0", float),
    "proto.momentum": ("proto_momentum", float),
    "contrast.delta_p": ("delta_p", float),
    "contrast.r_l": ("r_l", int),
    "contrast.r_h": ("r_h", int),
    "contrast.num_anchors": ("num_anchors", int),
    "contrast.num_negatives": ("num_negatives", int),
    "contrast.bank_capacity_fg": ("bank_capacity_fg", int),
    "contrast.bank_capacity_bg": ("bank_capacity_bg", int),
    "contrast.negative_mode": ("negative_mode", str),
    "contrast.max_push": ("max_push", int),
    "cam.beta": ("beta", float),
}


class ConfigError(ValueError):
    pass


def _convert(key, raw, typ, line_no):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"line {line_no}: key {key!r} expects {typ.__name__}, got {raw!r}") from None


def parse_config(text):
    """Parse config text into a validated RunConfig."""
    cfg = RunConfig()
    seen = set()
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line.strip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        seen.add(key)
        field, typ = SCHEMA[key]
        setattr(cfg, field, _convert(key, raw, typ, line_no))
    validate(cfg)
    return cfg


def render_config(cfg):
    """Render a RunConfig to text that re-parses to an equal config."""
    lines = []
    for key, (field, typ) in SCHEMA.items():
        value = getattr(cfg, field)
        if typ is bool:
            rendered = "true" if value else "false"
        elif typ is float:
            rendered = repr(float(value))
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def validate(cfg):
    """Check every invariant that does not need the dataset's class count."""
    checks = [
        (cfg.regime in ("ss", "da", "ws"), "regime must be ss, da or ws"),
        (cfg.batch_size >= 1, "train.batch_size must be >= 1"),
        (cfg.total_epochs >= 0, "train.total_epochs must be >= 0"),
        (0 <= cfg.warm_start_epochs, "train.warm_start_epochs must be >= 0"),
        (cfg.lr_base > 0, "train.lr_base must be positive"),
        (0 <= cfg.momentum < 1, "train.momentum must lie in [0, 1)"),
        (cfg.weight_decay >= 0, "train.weight_decay must be >= 0"),
        (cfg.head_lr_scale > 0, "train.head_lr_scale must be positive"),
        (cfg.features >= 2 and cfg.features % 2 == 0, "model.features must be even and >= 2"),
        (cfg.embed_dim >= 2, "model.embed_dim must be >= 2"),
        (0 <= cfg.ema_momentum <= 1, "model.ema_momentum must lie in [0, 1]"),
        (cfg.tau > 0, "loss.tau must be positive"),
        (cfg.xi1 >= 0 and cfg.xi2 >= 0, "loss.xi1/xi2 must be >= 0"),
        (cfg.lambda_c >= 0, "loss.lambda_c must be >= 0"),
        (cfg.eta > 0, "loss.eta must be positive"),
        (cfg.eps_floor > 0, "loss.eps_floor must be positive"),
        (0 < cfg.alpha0 < 1, "pseudo.alpha0 must lie in (0, 1)"),
        (0 <= cfg.proto_momentum <= 1, "proto.momentum must lie in [0, 1]"),
        (0 <= cfg.delta_p < 1, "contrast.delta_p must lie in [0, 1)"),
        (cfg.r_l >= 1, "contrast.r_l must be >= 1"),
        (cfg.r_l < cfg.r_h, "contrast.r_l must be < contrast.r_h"),
        (cfg.num_anchors >= 1, "contrast.num_anchors must be >= 1"),
        (cfg.num_negatives >= 1, "contrast.num_negatives must be >= 1"),
        (cfg.bank_capacity_fg >= 1, "contrast.bank_capacity_fg must be >= 1"),
        (cfg.bank_capacity_bg >= 1, "contrast.bank_capacity_bg must be >= 1"),
        (cfg.negative_mode in ("unreliable", "reliable"), "contrast.negative_mode must be unreliable or reliable"),
        (cfg.max_push >= 1, "contrast.max_push must be >= 1"),
        (0 < cfg.beta < 1, "cam.beta must lie in (0, 1)"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    return cfg


def validate_for_classes(cfg, num_classes):
    """Dataset-dependent invariants, checked once the class count is known."""
    if cfg.r_h > num_classes:
        raise ConfigError(
            f"contrast.r_h = {cfg.r_h} exceeds the dataset's {num_classes} classes"
        )
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())
