"""YAML experiment configuration with line-precise validation errors."""
from dataclasses import dataclass, field
import re

import yaml

from ..errors import ConfigError
from .experiments import learner_options

MODEL_KINDS = ("linear", "mixture", "bernoulli", "floor", "neural")
LEARNERS = ("exact", "mlp", "nw", "gp")
METRICS = ("rmse", "normalized_rmse", "mean_abs_angular_error")
_FILTER_RE = re.compile(
    r"^(kf|ekf|iekf|ukf|unfiltered|robust-dkf|hybrid-ekf|hybrid-ukf"
    r"|pf:\d+|pf-dkf:\d+|dkf(:(exact|mlp|nw|gp))?)$"
)


class _Located:
    """Parsed YAML value plus the source line of every key path."""

    def __init__(self, text, source):
        self.source = source
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else "?"
            raise ConfigError(f"{source}:{line}: malformed YAML: {getattr(exc, 'problem', exc)}") from exc
        self.lines = {}
        self.value = self._walk(node, "") if node is not None else {}

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = k.value
                sub = f"{path}.{key}" if path else key
                if key in out:
                    raise ConfigError(f"{self.source}:{k.start_mark.line + 1}: duplicate key '{sub}'")
                out[key] = self._walk(v, sub)
            return out
        if isinstance(node, yaml.SequenceNode):
            return [self._walk(v, f"{path}[{i}]") for i, v in enumerate(node.value)]
        return yaml.SafeLoader(" ").construct_object(node)

    def error(self, path, msg):
        line = self.lines.get(path)
        while line is None and path:
            path = path.rsplit(".", 1)[0] if "." in path else ""
            line = self.lines.get(path)
        return ConfigError(f"{self.source}:{line or 1}: field '{path or '<root>'}': {msg}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    model_kind: str
    model_params: dict
    filters: tuple
    T: int
    train_T: int
    seeds: tuple
    master_seed: int = 0
    metrics: tuple = ("rmse", "normalized_rmse")
    learner: dict = field(default_factory=lambda: {"kind": "exact"})
    ukf: dict = field(default_factory=dict)
    s_approx_samples: int = 100000
    output: str = None

    def __post_init__(self):
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if not self.filters:
            raise ConfigError("at least one filter is required")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")


def _int(loc, d, key, path, default=None, minimum=None):
    if key not in d:
        if default is None:
            raise loc.error(path, f"missing required key '{key}'")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise loc.error(f"{path}.{key}" if path else key, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise loc.error(f"{path}.{key}" if path else key, f"must be >= {minimum}, got {v}")
    return v


def parse_config(text, source="<config>"):
    loc = _Located(text, source)
    d = loc.value
    if not isinstance(d, dict):
        raise loc.error("", "top level must be a mapping")
    known = {"name", "model", "filters", "T", "train_T", "seeds", "master_seed", "metrics",
             "learner", "ukf", "s_approx_samples", "output"}
    for k in d:
        if k not in known:
            raise loc.error(k, f"unknown key '{k}'")
    model = d.get("model")
    if not isinstance(model, dict):
        raise loc.error("model", "missing or non-mapping 'model' section")
    kind = model.get("kind")
    if kind not in MODEL_KINDS:
        raise loc.error("model.kind", f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
    params = model.get("params", {}) or {}
    if not isinstance(params, dict):
        raise loc.error("model.params", "must be a mapping")

    filters = d.get("filters")
    if not isinstance(filters, list) or not filters:
        raise loc.error("filters", "must be a nonempty list")
    for i, f in enumerate(filters):
        if not isinstance(f, str) or not _FILTER_RE.match(f):
            raise loc.error(f"filters[{i}]", f"unknown filter {f!r}")
    if len(set(filters)) != len(filters):
        raise loc.error("filters", "filter names must be unique")

    seeds = d.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise loc.error("seeds", "must be a nonempty list of integers")
    for i, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise loc.error(f"seeds[{i}]", f"expected a nonnegative integer, got {s!r}")

    metrics = d.get("metrics", ["rmse", "normalized_rmse"])
    if not isinstance(metrics, list):
        raise loc.error("metrics", "must be a list")
    for i, m in enumerate(metrics):
        if m not in METRICS:
            raise loc.error(f"metrics[{i}]", f"unknown metric {m!r}")

    learner = d.get("learner", {"kind": "exact"})
    if not isinstance(learner, dict) or learner.get("kind") not in LEARNERS:
        raise loc.error("learner.kind" if isinstance(learner, dict) else "learner",
                        f"learner kind must be one of {', '.join(LEARNERS)}")
    try:
        learner_options(learner)
    except ConfigError as exc:
        raise loc.error("learner", str(exc)) from None
    ukf = d.get("ukf", {}) or {}
    if not isinstance(ukf, dict) or not set(ukf) <= {"alpha", "beta"}:
        raise loc.error("ukf", "only 'alpha' and 'beta' are allowed")
    if "alpha" in ukf and not (isinstance(ukf["alpha"], (int, float)) and ukf["alpha"] > 0):
        raise loc.error("ukf.alpha", "must be a positive number")

    output = d.get("output")
    if output is not None and not isinstance(output, str):
        raise loc.error("output", "must be a path string")
    name = d.get("name", "experiment")
    return ExperimentConfig(
        name=str(name),
        model_kind=kind,
        model_params=dict(params),
        filters=tuple(filters),
        T=_int(loc, d, "T", "", minimum=1),
        train_T=_int(loc, d, "train_T", "", default=0, minimum=0) if "train_T" in d else 0,
        seeds=tuple(seeds),
        master_seed=_int(loc, d, "master_seed", "", default=0, minimum=0) if "master_seed" in d else 0,
        metrics=tuple(metrics),
        learner=dict(learner),
        ukf=dict(ukf),
        s_approx_samples=_int(loc, d, "s_approx_samples", "", default=100000, minimum=2)
        if "s_approx_samples" in d else 100000,
        output=output,
    )


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))
