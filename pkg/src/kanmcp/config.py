"""Run configuration: flat ``key = value`` files with ``#`` comments."""

from dataclasses import dataclass, fields, replace

from .data import read_keyvalue
from .errors import ConfigError
from .model import HyperParams

ON = {"on", "true", "yes", "1"}
OFF = {"off", "false", "no", "0"}


@dataclass(frozen=True)
class RunConfig:
    beta: float = 1e-3
    d_h: int = 3
    mid_dim: int = 64
    head_hidden: tuple = (4,)
    grid_size: int = 5
    spline_degree: int = 3
    batch_size: int = 32
    epochs: int = 50
    lr_text: float = 1e-3
    lr_other: float = 1e-3
    seed: int = 0
    mcpareto: bool = True
    data: str = ""

    def __post_init__(self):
        checks = [
            ("beta", self.beta >= 0, ">= 0"),
            ("d_h", self.d_h >= 1, ">= 1"),
            ("mid_dim", self.mid_dim >= 1, ">= 1"),
            ("head_hidden", all(w >= 1 for w in self.head_hidden), "a list of positive widths"),
            ("grid_size", self.grid_size >= 1, ">= 1"),
            ("spline_degree", 1 <= self.spline_degree <= 5, "in [1, 5]"),
            ("batch_size", self.batch_size >= 1, ">= 1"),
            ("epochs", self.epochs >= 1, ">= 1"),
            ("lr_text", self.lr_text > 0, "> 0"),
            ("lr_other", self.lr_other > 0, "> 0"),
            ("seed", self.seed >= 0, ">= 0"),
        ]
        for name, ok, rule in checks:
            if not ok:
                raise ConfigError(f"{name} must be {rule}, got {getattr(self, name)!r}")

    def hyper(self, dims):
        return HyperParams(
            d_t=dims["t"],
            d_a=dims["a"],
            d_v=dims["v"],
            d_h=self.d_h,
            mid_dim=self.mid_dim,
            head_hidden=tuple(self.head_hidden),
            grid_size=self.grid_size,
            spline_degree=self.spline_degree,
            beta=self.beta,
            lr_text=self.lr_text,
            lr_other=self.lr_other,
            seed=self.seed,
        )

    def to_lines(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "head_hidden":
                v = ",".join(str(w) for w in v)
            elif f.name == "mcpareto":
                v = "on" if v else "off"
            out.append(f"{f.name} = {v}")
        return out

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def parse_bool(name, value):
    v = value.strip().lower()
    if v in ON:
        return True
    if v in OFF:
        return False
    raise ConfigError(f"{name} must be on/off, got {value!r}")


def _convert(name, typ, value):
    try:
        if name == "head_hidden":
            value = value.strip()
            return tuple(int(w) for w in value.split(",")) if value and value != "none" else ()
        if name == "mcpareto":
            return parse_bool(name, value)
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r}") from None


def parse_config(raw):
    """Build a :class:`RunConfig` from a ``{key: str}`` mapping; unknown keys are rejected."""
    types = {f.name: f.type for f in fields(RunConfig)}
    kwargs = {}
    for key, value in raw.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        typ = {"float": float, "int": int}.get(types[key], types[key]) if isinstance(types[key], str) else types[key]
        kwargs[key] = _convert(key, typ, value)
    return RunConfig(**kwargs)


def load_config(path):
    return parse_config(read_keyvalue(path))
