"""Model configuration and its plain-text key=value file format."""

from dataclasses import dataclass, fields, replace

ATTENTION_KINDS = ("none", "sa", "csa", "ca")


@dataclass(frozen=True)
class MqnConfig:
    """Hyperparameters of the network.

    Defaults reconstruct the published architecture: width-scaled
    MobileNetV2 encoder with skip taps, four decoder stages of two
    bottleneck blocks each with a trailing attention block, a pointwise
    tail, and a high-precision residual head. All widths are overridable
    from a config file.
    """
    alpha: float = 0.35
    input_size: int = 256
    encoder_taps: tuple = (1, 3, 6, 13)
    bottleneck_layer: int = 16
    decoder_widths: tuple = (160, 16, 8, 8)
    decoder_irlbs: tuple = (2, 2, 2, 2)
    expansion: int = 6
    attention: str = "ca"
    ca_reduction: int = 8
    ca_expand: bool = False       # gate bottleneck grows as f*r instead of f/r
    head_channels: int = 16
    irlb_activation: str = "relu6"
    head_relu: bool = True

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        taps = tuple(self.encoder_taps)
        if any(b <= a for a, b in zip(taps, taps[1:])):
            raise ValueError("encoder taps must be strictly increasing")
        if len(taps) != len(self.decoder_widths) or len(taps) != len(self.decoder_irlbs):
            raise ValueError("one decoder stage per encoder tap")
        for w in self.decoder_widths:
            if w < 8 or w % 8:
                raise ValueError("decoder widths must be multiples of 8, floor 8")
        if any(n < 1 for n in self.decoder_irlbs):
            raise ValueError("each decoder stage needs at least one block")
        if self.expansion < 1 or self.ca_reduction < 1:
            raise ValueError("expansion and ca_reduction must be positive")
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}")
        if self.irlb_activation not in ("relu", "relu6"):
            raise ValueError("irlb_activation must be relu or relu6")
        object.__setattr__(self, "encoder_taps", taps)
        object.__setattr__(self, "decoder_widths", tuple(self.decoder_widths))
        object.__setattr__(self, "decoder_irlbs", tuple(self.decoder_irlbs))


def config_to_text(cfg: MqnConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> MqnConfig:
    known = {f.name: f for f in fields(MqnConfig)}
    kwargs = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {ln}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {ln}: unknown key {key!r}")
        kwargs[key] = _parse(known[key].default, value)
    return MqnConfig(**kwargs)


def _parse(default, value: str):
    if isinstance(default, bool):
        if value.lower() not in ("true", "false"):
            raise ValueError(f"expected true/false, got {value!r}")
        return value.lower() == "true"
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(x) for x in value.split(",") if x.strip())
    return value


def load_config(path) -> MqnConfig:
    if str(path) in ("default", ""):
        return MqnConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


def override(cfg: MqnConfig, **kwargs) -> MqnConfig:
    return replace(cfg, **kwargs)
