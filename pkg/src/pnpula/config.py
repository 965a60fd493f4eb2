"""Experiment configuration: flat ``key = value`` text in five sections.

Every key has a type and a default; a bare file reproduces the standard
deblurring setup (eps = (5/255)^2, C = [-1, 2], alpha = 1, X_0 = y).
``delta`` and ``lam`` accept ``auto``: ``lam = lambda_max`` and ``delta`` just
below ``delta_th`` for the configured problem.
"""
import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .samplers import DEFAULT_EPS

AUTO = "auto"


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return [float(t) for t in s.replace(",", " ").split()]


def _auto_float(s):
    return AUTO if s.strip().lower() == AUTO else float(s)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(repr(float(t)) for t in v)
    return str(v)


# (type parser, default)
SCHEMA = {
    "experiment": {
        "task": (str, "deblur"),
        "input": (str, "synthetic"),
        "output": (str, "run"),
        "n_chains": (int, 1),
    },
    "degradation": {
        "blur_size": (int, 9),
        "sigma": (float, 1.0 / 255),
        "hidden_fraction": (float, 0.8),
        "seed": (int, 0),
    },
    "denoiser": {
        "kind": (str, "gmm"),
        "mean": (float, 0.5),
        "variance": (float, 0.0025),
        "weights": (_floats, [1 / 3, 1 / 3, 1 / 3]),
        "means": (_floats, [0.2, 0.5, 0.8]),
        "variances": (_floats, [0.0025, 0.0025, 0.0025]),
        "command": (str, ""),
        "address": (str, ""),
        "lipschitz": (float, 1.0),
        "timeout": (float, 30.0),
    },
    "sampler": {
        "variant": (str, "pnp-ula"),
        "delta": (_auto_float, AUTO),
        "lam": (_auto_float, AUTO),
        "alpha": (float, 1.0),
        "eps": (float, DEFAULT_EPS),
        "c_lo": (float, -1.0),
        "c_hi": (float, 2.0),
        "n_iter": (int, 10_000),
        "burn_in": (int, 1_000),
        "thinning": (int, 1),
        "seed": (int, 0),
        "strict": (_bool, True),
    },
    "diagnostics": {
        "fourier": (_bool, True),
        "multiscale_levels": (int, 3),
        "acf_max_lag": (int, 100),
        "acf_pilot": (int, 100),
        "trace_stride": (int, 100),
        "ssim": (_bool, True),
        "keep_samples": (int, 16),
        "checkpoint": (_bool, True),
    },
}

TASKS = ("deblur", "inpaint", "denoise")
DENOISERS = ("gmm", "gaussian", "identity", "external")


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {s: {k: d for k, (_, d) in keys.items()}
                                                  for s, keys in SCHEMA.items()})
    source: str = "<defaults>"

    def __getitem__(self, section):
        return self.values[section]

    def get(self, dotted):
        sec, key = dotted.split(".", 1)
        return self.values[sec][key]

    def set(self, dotted, raw, where="--set"):
        if "." not in dotted:
            raise ConfigError(f"{where}: expected section.key, got {dotted!r}")
        sec, key = dotted.split(".", 1)
        self.values[sec][key] = _convert(sec, key, raw, where)

    def to_text(self):
        out = io.StringIO()
        for sec, keys in SCHEMA.items():
            out.write(f"[{sec}]\n")
            for key in keys:
                out.write(f"{key} = {_fmt(self.values[sec][key])}\n")
            out.write("\n")
        return out.getvalue()

    def validate(self, base_dir=None):
        e = self.values
        if e["experiment"]["task"] not in TASKS:
            raise ConfigError(f"experiment.task must be one of {TASKS}")
        if e["denoiser"]["kind"] not in DENOISERS:
            raise ConfigError(f"denoiser.kind must be one of {DENOISERS}")
        if e["experiment"]["n_chains"] < 1:
            raise ConfigError("experiment.n_chains must be >= 1")
        if e["degradation"]["sigma"] < 0:
            raise ConfigError("degradation.sigma must be >= 0")
        if e["experiment"]["task"] == "denoise" and e["degradation"]["sigma"] == 0:
            raise ConfigError("denoising needs degradation.sigma > 0")
        inp = e["experiment"]["input"]
        if inp != "synthetic":
            p = Path(inp)
            if not p.is_absolute() and base_dir is not None:
                p = Path(base_dir) / p
            if not p.is_file():
                raise ConfigError(f"experiment.input: file not found: {p}")
            e["experiment"]["input"] = str(p)
        d = e["denoiser"]
        if d["kind"] == "gmm" and not (len(d["weights"]) == len(d["means"]) == len(d["variances"])):
            raise ConfigError("denoiser.weights, means and variances must have equal length")
        if d["kind"] == "external" and not (d["command"] or d["address"]):
            raise ConfigError("external denoiser needs denoiser.command or denoiser.address")
        return self


def _convert(sec, key, raw, where):
    if sec not in SCHEMA:
        raise ConfigError(f"{where}: unknown section [{sec}]")
    if key not in SCHEMA[sec]:
        raise ConfigError(f"{where}: unknown key {key!r} in section [{sec}]")
    parse = SCHEMA[sec][key][0]
    try:
        return parse(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {sec}.{key}: {exc}") from None


def _line_of(text, sec, key=None):
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == sec:
                return i
        elif current == sec and key is not None and s.split("=", 1)[0].strip().lower() == key:
            return i
    return 0


def parse_config(text, source="<string>"):
    cp = configparser.ConfigParser(interpolation=None, default_section="\x00", inline_comment_prefixes=(";",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = ExperimentConfig(source=source)
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}:{_line_of(text, sec)}: unknown section [{sec}]")
        for key, raw in cp.items(sec):
            where = f"{source}:{_line_of(text, sec, key)}"
            cfg.values[sec][key] = _convert(sec, key, raw, where)
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
