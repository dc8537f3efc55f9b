"""JSON persistence for fitted models.

Floats are written with their shortest round-trip representation, so a
reloaded model predicts bit-identically.
"""
import json

import numpy as np

from ..errors import ConfigError
from ..models import LinearStateSpec
from .gp import GpModel, KernelSpec
from .mlp import MlpModel
from .nw import ConstantCovariance, NwCovariance, NwModel

FORMAT_VERSION = 1


def _arr(a):
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarr(o):
    return np.array(o["data"], dtype=float).reshape(o["shape"])


def to_dict(model):
    if isinstance(model, NwModel):
        return {"kind": "nw", "bandwidth": _arr(model.bandwidth), "xs": _arr(model.xs), "zs": _arr(model.zs)}
    if isinstance(model, GpModel):
        return {
            "kind": "gp",
            "kernels": [{"family": k.family, "sigma_f2": k.sigma_f2, "sigma_l2": k.sigma_l2} for k in model.kernels],
            "noises": list(model.noises),
            "train_x": _arr(model.train_x),
            "alpha": _arr(model.alpha),
        }
    if isinstance(model, MlpModel):
        return {"kind": "mlp", "W1": _arr(model.W1), "b1": _arr(model.b1), "W2": _arr(model.W2), "b2": _arr(model.b2)}
    if isinstance(model, ConstantCovariance):
        return {"kind": "constant_q", "Q": _arr(model.Q)}
    if isinstance(model, NwCovariance):
        if model.form != "residual":
            raise ConfigError("only residual-form covariance models are serializable")
        return {"kind": "nw_q", "nw": to_dict(model.nw), "ridge": model.ridge}
    if isinstance(model, LinearStateSpec):
        return {"kind": "linear_state", "A": _arr(model.A), "gamma": _arr(model.gamma), "S": _arr(model.S)}
    if isinstance(model, dict):
        return {"kind": "bundle", "parts": {k: to_dict(v) for k, v in model.items()}}
    raise ConfigError(f"cannot serialize {type(model).__name__}")


def from_dict(o):
    kind = o.get("kind")
    if kind == "nw":
        bw = _unarr(o["bandwidth"])
        return NwModel(float(bw) if bw.ndim == 0 else bw, _unarr(o["xs"]), _unarr(o["zs"]))
    if kind == "gp":
        ks = tuple(KernelSpec(k["family"], k["sigma_f2"], k["sigma_l2"]) for k in o["kernels"])
        return GpModel(ks, tuple(o["noises"]), _unarr(o["train_x"]), _unarr(o["alpha"]))
    if kind == "mlp":
        return MlpModel(_unarr(o["W1"]), _unarr(o["b1"]), _unarr(o["W2"]), _unarr(o["b2"]))
    if kind == "constant_q":
        return ConstantCovariance(_unarr(o["Q"]))
    if kind == "nw_q":
        return NwCovariance(from_dict(o["nw"]), o["ridge"])
    if kind == "linear_state":
        return LinearStateSpec(_unarr(o["A"]), _unarr(o["gamma"]), _unarr(o["S"]))
    if kind == "bundle":
        return {k: from_dict(v) for k, v in o["parts"].items()}
    raise ConfigError(f"unknown model kind {kind!r}")


def save_model(model, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"version": FORMAT_VERSION, "model": to_dict(model)}, fh, indent=1)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        o = json.load(fh)
    if o.get("version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported model file version {o.get('version')!r}")
    return from_dict(o["model"])
