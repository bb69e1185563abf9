"""JSON serialization of parameter sets and scenario files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .channel_model import ModelParams
from .dl_reconstruction import DlModelPartial

__all__ = [
    "load_params",
    "params_from_dict",
    "params_to_dict",
    "partial_from_dict",
    "partial_to_dict",
    "read_json",
    "save_params",
    "write_json",
]


def params_to_dict(p: ModelParams) -> dict:
    return {
        "alpha": float(p.alpha),
        "lambda_diag": [float(x) for x in p.lambda_diag],
        "support": [bool(x) for x in p.support],
        "bias": [float(x) for x in p.bias],
        "noise_var": float(p.noise_var),
    }


def params_from_dict(d: dict) -> ModelParams:
    try:
        p = ModelParams(
            float(d["alpha"]),
            np.asarray(d["lambda_diag"], float),
            np.asarray(d["support"], bool),
            np.asarray(d["bias"], float),
            float(d["noise_var"]),
        )
    except KeyError as exc:
        raise ValueError(f"parameter record lacks field {exc}") from None
    p.validate()
    return p


def partial_to_dict(p: DlModelPartial, lambda_anchor=None, sigma_anchor=None) -> dict:
    """Downlink partial model plus the uplink anchors used to centre the prior."""
    d = {
        "alpha_dl": float(p.alpha_dl),
        "support_dl": [bool(x) for x in p.support_dl],
        "bias_dl": [float(x) for x in p.bias_dl],
        "wavelength_ratio": float(p.wavelength_ratio),
        "source_bins": {str(k): [int(x) for x in v] for k, v in p.source_bins.items()},
    }
    if lambda_anchor is not None:
        d["lambda_anchor"] = [float(x) for x in lambda_anchor]
    if sigma_anchor is not None:
        d["sigma_anchor"] = float(sigma_anchor)
    return d


def partial_from_dict(d: dict) -> DlModelPartial:
    try:
        return DlModelPartial(
            float(d["alpha_dl"]),
            np.asarray(d["support_dl"], bool),
            np.asarray(d["bias_dl"], float),
            float(d["wavelength_ratio"]),
            {int(k): list(v) for k, v in d["source_bins"].items()},
        )
    except KeyError as exc:
        raise ValueError(f"downlink record lacks field {exc}") from None


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None


def save_params(params, path) -> Path:
    """Write a list of per-user parameter sets."""
    return write_json({"users": [params_to_dict(p) for p in params]}, path)


def load_params(path) -> list:
    d = read_json(path)
    if not isinstance(d, dict) or "users" not in d:
        raise ValueError(f"{path}: expected an object with a 'users' list")
    return [params_from_dict(u) for u in d["users"]]
