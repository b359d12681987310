# backend/app/model_store.py

import json
from pathlib import Path

import numpy as np
from loguru import logger

from .ensembles.boost import BoostModel
from .ensembles.mixture import EnsembleModel
from .wmf import FactorModel

FORMAT_NAME = "pecf-model"
FORMAT_VERSION = 1

AnyModel = FactorModel | EnsembleModel | BoostModel


class ModelFormatError(ValueError):
    pass


def _components(model: AnyModel) -> tuple[FactorModel, ...]:
    if isinstance(model, FactorModel):
        return (model,)
    return model.components


def _header(model: AnyModel) -> dict:
    comps = _components(model)
    first = comps[0]
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "k": len(comps),
        "d": first.d,
        "m": first.num_users,
        "n": first.num_items,
    }
    if isinstance(model, FactorModel):
        header["kind"] = "factor"
    elif isinstance(model, EnsembleModel):
        header.update(kind="mixture", weights=[float(w) for w in model.weights], noise_sigma=float(model.noise_sigma))
    elif isinstance(model, BoostModel):
        header.update(kind="additive", shrinkage=float(model.shrinkage))
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return header


def save_model(model: AnyModel, path: str | Path) -> Path:
    """
    One JSON header line, then each component's U (d × m) and V (d × n) as
    little-endian float64 in row-major order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _header(model)
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for c in _components(model):
            f.write(np.ascontiguousarray(c.user_factors, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(c.item_factors, dtype="<f8").tobytes())
    logger.info(f"Saved {header['kind']} model ({header['k']} components) → {path}")
    return path


def load_model(path: str | Path) -> AnyModel:
    path = Path(path)
    with open(path, "rb") as f:
        first_line = f.readline()
        payload = f.read()

    try:
        header = json.loads(first_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"{path}: unreadable header: {e}") from None
    if header.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"{path}: not a {FORMAT_NAME} container")
    if header.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {header.get('version')}")

    k, d, m, n = (int(header[key]) for key in ("k", "d", "m", "n"))
    expected = k * d * (m + n) * 8
    if len(payload) != expected:
        raise ModelFormatError(f"{path}: expected {expected} bytes of factors, found {len(payload)}")

    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    comps, offset = [], 0
    for _ in range(k):
        U = values[offset:offset + d * m].reshape(d, m)
        offset += d * m
        V = values[offset:offset + d * n].reshape(d, n)
        offset += d * n
        comps.append(FactorModel(U.copy(), V.copy()))

    kind = header.get("kind")
    if kind == "factor":
        return comps[0]
    if kind == "mixture":
        return EnsembleModel(tuple(comps), np.asarray(header["weights"]), float(header["noise_sigma"]))
    if kind == "additive":
        return BoostModel(tuple(comps), float(header["shrinkage"]))
    raise ModelFormatError(f"{path}: unknown model kind '{kind}'")
