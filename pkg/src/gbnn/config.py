"""Run configuration files (INI syntax) and their schema.

Precedence is command-line overrides > file values > schema defaults.  Every
problem found while parsing is collected and reported together, one
``section.key: message`` line per field.
"""
import configparser
import os
from dataclasses import dataclass, field, replace

from .boosting import BoostConfig
from .errors import ConfigError
from .network import TrainConfig

MODEL_KINDS = ("gb-cnn", "gb-dnn", "cnn", "dnn")


def _floats(text):
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _label(text):
    try:
        return int(text)
    except ValueError:
        return text.strip()


def _choice(*options):
    def parse(text):
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


# section -> key -> (parser, default); None means "unset"
SCHEMA = {
    "run": {
        "model": (_choice(*MODEL_KINDS), None),
        "seed": (int, 0),
        "out_dir": (str, "runs"),
        "name": (str, None),
        "record_time": (_bool, False),
    },
    "data": {
        "name": (str, None),
        "format": (_choice("csv", "idx", "npz"), "csv"),
        "path": (str, None),
        "label_column": (_label, -1),
        "has_header": (_bool, False),
        "images": (str, None),
        "labels": (str, None),
        "test_path": (str, None),
        "test_images": (str, None),
        "test_labels": (str, None),
        "preprocess": (_choice("standardize", "rescale", "none"), None),
        "limit": (int, None),
        "test_limit": (int, None),
    },
    "architecture": {
        "conv": (_bool, None),
        "filters": (_ints, (32, 64, 128)),
        "dropouts": (_floats, (0.2, 0.3, 0.4)),
        "hidden_width": (int, 20),
        "dense_layers": (int, 10),
    },
    "boost": {
        "iterations": (int, 10),
        "nu": (float, 0.1),
        "tol": (float, 1e-4),
        "rho_min": (float, 0.0),
        "rho_max": (float, 10.0),
        "rho_tol": (float, 1e-6),
        "init": (_choice("zero", "prior"), "zero"),
    },
    "train": {
        "epochs": (int, 200),
        "batch_size": (int, 128),
        "lr": (float, 0.001),
        "optimizer": (_choice("adam", "sgd"), "adam"),
        "patience": (int, 10),
        "min_delta": (float, 1e-4),
    },
    "eval": {
        "protocol": (_choice("holdout", "kfold", "none"), "holdout"),
        "test_fraction": (float, 0.2),
        "k": (int, 10),
        "inner_k": (int, 3),
    },
    "grid": {
        "lr": (_floats, (0.1, 0.01, 0.001)),
        "nu": (_floats, (0.1, 0.25, 0.5, 1.0)),
    },
    "benchmark": {
        "models": (lambda t: tuple(_choice(*MODEL_KINDS)(v) for v in t.split(",") if v.strip()),
                   ("gb-dnn", "dnn")),
        "table": (str, "benchmark.csv"),
    },
}


@dataclass
class DataSpec:
    name: str = None
    format: str = "csv"
    path: str = None
    label_column: object = -1
    has_header: bool = False
    images: str = None
    labels: str = None
    test_path: str = None
    test_images: str = None
    test_labels: str = None
    preprocess: str = None
    limit: int = None
    test_limit: int = None

    @property
    def has_test(self):
        return bool(self.test_path or (self.test_images and self.test_labels))


@dataclass
class RunConfig:
    """Validated, typed view of a run configuration file."""

    model: str
    seed: int = 0
    out_dir: str = "runs"
    name: str = None
    record_time: bool = False
    datasets: list = field(default_factory=list)
    conv: bool = None
    filters: tuple = (32, 64, 128)
    dropouts: tuple = (0.2, 0.3, 0.4)
    hidden_width: int = 20
    dense_layers: int = 10
    boost: BoostConfig = None
    train: TrainConfig = None
    protocol: str = "holdout"
    test_fraction: float = 0.2
    k: int = 10
    inner_k: int = 3
    grid_lr: tuple = (0.1, 0.01, 0.001)
    grid_nu: tuple = (0.1, 0.25, 0.5, 1.0)
    models: tuple = ("gb-dnn", "dnn")
    table: str = "benchmark.csv"
    ignored: list = field(default_factory=list)
    base_dir: str = "."

    def resolve(self, path):
        """Interpret ``path`` relative to the config file's directory."""
        if path is None or os.path.isabs(path):
            return path
        return os.path.join(self.base_dir, path)

    @property
    def data(self):
        return self.datasets[0]

    @property
    def is_boosted(self):
        return self.model.startswith("gb-")

    def boost_config(self, model=None, lr=None, nu=None):
        model = model or self.model
        train = self.train_config(lr)
        return BoostConfig(
            iterations=self.boost.iterations, hidden_width=self.hidden_width,
            nu=nu if nu is not None else self.boost.nu, train=train, tol=self.boost.tol,
            rho_bounds=self.boost.rho_bounds, rho_tol=self.boost.rho_tol,
            conv_filters=self.filters if _uses_conv(model, self.conv) else None,
            conv_dropouts=self.dropouts, init=self.boost.init)

    def train_config(self, lr=None):
        return replace(self.train, lr=lr) if lr is not None else self.train

    def echo(self):
        out = {k: v for k, v in self.__dict__.items()
               if k not in ("boost", "train", "datasets", "ignored", "base_dir")}
        out["datasets"] = [d.__dict__ for d in self.datasets]
        out["boost"] = {k: v for k, v in self.boost.__dict__.items() if k != "train"}
        out["train"] = dict(self.train.__dict__)
        return out


def _uses_conv(model, conv_flag):
    if conv_flag is not None:
        return conv_flag and model in ("gb-cnn", "cnn")
    return model in ("gb-cnn", "cnn")


def read_config(path=None, overrides=None, text=None):
    """Parse a config file (or ``text``) and apply ``overrides``.

    ``overrides`` maps ``"section.key"`` to a raw string value.
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if text is not None:
        parser.read_string(text)
    elif path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, str(value))
    cfg = _build(parser)
    if path is not None:
        cfg.base_dir = os.path.dirname(os.path.abspath(path))
    return cfg


def _parse_section(parser, section, schema_name, errors):
    schema = SCHEMA[schema_name]
    values = {key: default for key, (_, default) in schema.items()}
    present = set()
    if parser.has_section(section):
        for key, raw in parser.items(section):
            if key not in schema:
                errors.append(f"{section}.{key}: unknown field")
                continue
            try:
                values[key] = schema[key][0](raw)
                present.add(key)
            except ValueError as exc:
                errors.append(f"{section}.{key}: {exc}")
    return values, present


def _build(parser):
    errors = []
    for section in parser.sections():
        base = section.split(":", 1)[0]
        if base not in SCHEMA:
            errors.append(f"{section}: unknown section")

    run, _ = _parse_section(parser, "run", "run", errors)
    arch, _ = _parse_section(parser, "architecture", "architecture", errors)
    boost, boost_present = _parse_section(parser, "boost", "boost", errors)
    train, _ = _parse_section(parser, "train", "train", errors)
    ev, _ = _parse_section(parser, "eval", "eval", errors)
    grid, _ = _parse_section(parser, "grid", "grid", errors)
    bench, _ = _parse_section(parser, "benchmark", "benchmark", errors)

    data_sections = [s for s in parser.sections() if s.startswith("data:")] or ["data"]
    datasets = []
    for section in data_sections:
        values, _ = _parse_section(parser, section, "data", errors)
        spec = DataSpec(**values)
        if spec.name is None:
            spec.name = section.split(":", 1)[1] if ":" in section else "data"
        if spec.format in ("csv", "npz") and not spec.path:
            errors.append(f"{section}.path: required for format {spec.format}")
        if spec.format == "idx" and not (spec.images and spec.labels):
            errors.append(f"{section}.images/labels: both required for format idx")
        datasets.append(spec)

    model = run["model"]
    if model is None:
        if parser.has_section("benchmark"):
            model = bench["models"][0] if bench["models"] else None
        if model is None:
            errors.append("run.model: required (one of " + ", ".join(MODEL_KINDS) + ")")

    if ev["k"] < 2:
        errors.append("eval.k: must be >= 2")
    if ev["inner_k"] < 2:
        errors.append("eval.inner_k: must be >= 2")
    if not 0.0 < ev["test_fraction"] < 1.0:
        errors.append("eval.test_fraction: must lie in (0, 1)")
    if len(arch["filters"]) != len(arch["dropouts"]):
        errors.append("architecture.dropouts: need one rate per entry of architecture.filters")
    if arch["dense_layers"] < 1:
        errors.append("architecture.dense_layers: must be >= 1")
    if not grid["lr"]:
        errors.append("grid.lr: at least one value required")

    train_cfg = boost_cfg = None
    try:
        train_cfg = TrainConfig(seed=run["seed"], **train)
    except ConfigError as exc:
        errors.append(f"train: {exc}")
    try:
        boost_cfg = BoostConfig(iterations=boost["iterations"], hidden_width=arch["hidden_width"],
                                nu=boost["nu"], tol=boost["tol"],
                                rho_bounds=(boost["rho_min"], boost["rho_max"]),
                                rho_tol=boost["rho_tol"], init=boost["init"])
    except ConfigError as exc:
        errors.append(f"boost: {exc}")

    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))

    ignored = []
    if model in ("cnn", "dnn") and boost_present:
        ignored = sorted(f"boost.{k}" for k in boost_present)
    return RunConfig(
        model=model, seed=run["seed"], out_dir=run["out_dir"], name=run["name"],
        record_time=run["record_time"], datasets=datasets, conv=arch["conv"],
        filters=arch["filters"], dropouts=arch["dropouts"], hidden_width=arch["hidden_width"],
        dense_layers=arch["dense_layers"], boost=boost_cfg, train=train_cfg,
        protocol=ev["protocol"], test_fraction=ev["test_fraction"], k=ev["k"],
        inner_k=ev["inner_k"], grid_lr=grid["lr"], grid_nu=grid["nu"],
        models=bench["models"], table=bench["table"], ignored=ignored)
