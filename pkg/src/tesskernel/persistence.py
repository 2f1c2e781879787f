"""Versioned JSON model files with a content checksum."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from .data import ScalingTransform
from .kernel import BlockPMatrix, Box, TessellatedKernel, enumerate_basis
from .library import GaussianKernel, PolynomialKernel, WeightedSumKernel
from .qp import SvmModel

FORMAT_NAME = "tesskernel-model"
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    """Unreadable, corrupted or incompatible model file."""


def _matrix(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def kernel_to_dict(kernel) -> dict:
    if isinstance(kernel, TessellatedKernel):
        out = {
            "type": "tessellated",
            "degree": kernel.basis.d,
            "basis": kernel.basis.descriptor(),
            "box": {"lower": _matrix(kernel.box.lower), "upper": _matrix(kernel.box.upper)},
            "Q1": _matrix(kernel.Q1),
            "Q2": _matrix(kernel.Q2),
            "Q3": _matrix(kernel.Q3),
            "Q4": _matrix(kernel.Q4),
        }
        if kernel.psd_certificate is not None:
            out["P"] = _matrix(kernel.psd_certificate.matrix)
        return out
    if isinstance(kernel, WeightedSumKernel):
        return {"type": "weighted_sum", "weights": _matrix(kernel.weights), "kernels": [kernel_to_dict(k) for k in kernel.kernels]}
    if isinstance(kernel, (GaussianKernel, PolynomialKernel)):
        return kernel.to_dict()
    raise TypeError(f"cannot serialize kernel of type {type(kernel).__name__}")


def kernel_from_dict(d: dict):
    kind = d.get("type")
    if kind == "tessellated":
        desc = d["basis"]
        basis = enumerate_basis(int(desc["n"]), int(desc["d"]))
        if len(basis) != int(desc["size"]):
            raise ModelFileError("basis size does not match its descriptor")
        box = Box(np.array(d["box"]["lower"]), np.array(d["box"]["upper"]))
        cert = BlockPMatrix(np.array(d["P"])) if "P" in d else None
        return TessellatedKernel(basis, box, *(np.array(d[k]) for k in ("Q1", "Q2", "Q3", "Q4")), psd_certificate=cert)
    if kind == "weighted_sum":
        return WeightedSumKernel(np.array(d["weights"]), [kernel_from_dict(k) for k in d["kernels"]])
    if kind == "gaussian":
        return GaussianKernel(float(d["sigma"]), None if d["features"] is None else tuple(d["features"]))
    if kind == "polynomial":
        return PolynomialKernel(int(d["degree"]), None if d["features"] is None else tuple(d["features"]))
    raise ModelFileError(f"unknown kernel type {kind!r}")


def _checksum(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def model_to_document(model: SvmModel) -> dict:
    payload = {
        "kernel": kernel_to_dict(model.kernel),
        "n_features": int(np.atleast_2d(model.points).shape[1]),
        "support_points": _matrix(model.points),
        "labels": [int(v) for v in model.labels],
        "alpha": _matrix(model.alpha),
        "bias": float(model.bias),
        "scaling": None if model.scaling is None else model.scaling.to_dict(),
        "meta": model.meta,
    }
    return {"format": FORMAT_NAME, "format_version": FORMAT_VERSION, "checksum": _checksum(payload), "payload": payload}


def save_model(model: SvmModel, path: Union[str, Path]) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(model_to_document(model), indent=1)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path: Union[str, Path]) -> SvmModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: corrupted model file, checksum cannot be verified ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFileError(f"{path}: not a {FORMAT_NAME} file")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"{path}: unsupported format version {doc.get('format_version')!r} (expected {FORMAT_VERSION})")
    payload = doc.get("payload")
    if not isinstance(payload, dict) or _checksum(payload) != doc.get("checksum"):
        raise ModelFileError(f"{path}: checksum mismatch, file is corrupted")
    try:
        kernel = kernel_from_dict(payload["kernel"])
        scaling = None if payload["scaling"] is None else ScalingTransform.from_dict(payload["scaling"])
        points = np.array(payload["support_points"], dtype=float).reshape(-1, int(payload["n_features"]))
        return SvmModel(
            kernel=kernel,
            points=points,
            labels=np.array(payload["labels"], dtype=int),
            alpha=np.array(payload["alpha"], dtype=float),
            bias=float(payload["bias"]),
            scaling=scaling,
            meta=dict(payload.get("meta") or {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"{path}: malformed model payload ({exc})") from None
