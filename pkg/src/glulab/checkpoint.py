"""Checkpoint I/O: a plain-text manifest plus a raw little-endian float32 blob.

Manifest lines are ``key = value``. ``config.<field>`` lines carry the
model config; ``tensor.<name> = <d0>x<d1>... float32`` lines list tensors in
blob order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import CONFIG_FIELDS, ModelConfig, TransformerModel

FORMAT = "glulab-checkpoint-1"
MANIFEST = "model.manifest"
BLOB = "model.bin"
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: TransformerModel, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [f"format = {FORMAT}"]
    for name in CONFIG_FIELDS:
        lines.append(f"config.{name} = {getattr(model.config, name)}")
    params = model.parameters()
    for name, t in params.items():
        lines.append(f"tensor.{name} = {'x'.join(map(str, t.shape))} float32")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")
    with open(directory / BLOB, "wb") as fh:
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype=_LE_F32).tobytes())
    return directory


def read_manifest(directory) -> tuple[dict[str, str], list[tuple[str, tuple[int, ...]]]]:
    config: dict[str, str] = {}
    tensors: list[tuple[str, tuple[int, ...]]] = []
    text = (Path(directory) / MANIFEST).read_text()
    fmt = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"manifest line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        if key == "format":
            fmt = value
        elif key.startswith("config."):
            config[key[len("config."):]] = value
        elif key.startswith("tensor."):
            dims, _, dtype = value.partition(" ")
            if dtype.strip() != "float32":
                raise CheckpointError(f"tensor {key}: unsupported dtype {dtype!r}")
            shape = tuple(int(d) for d in dims.split("x")) if dims else ()
            tensors.append((key[len("tensor."):], shape))
        else:
            raise CheckpointError(f"manifest line {lineno}: unknown key {key!r}")
    if fmt != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {fmt!r}")
    return config, tensors


def _coerce(name: str, raw: str):
    default = getattr(ModelConfig(), name)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    return type(default)(raw)


def load_checkpoint(directory) -> TransformerModel:
    directory = Path(directory)
    raw_config, tensors = read_manifest(directory)
    unknown = set(raw_config) - set(CONFIG_FIELDS)
    if unknown:
        raise CheckpointError(f"unknown config keys in manifest: {sorted(unknown)}")
    config = ModelConfig(**{k: _coerce(k, v) for k, v in raw_config.items()})
    model = TransformerModel(config)
    params = model.parameters()
    blob = np.fromfile(directory / BLOB, dtype=_LE_F32)
    expected = sum(int(np.prod(s)) for _, s in tensors)
    if blob.size != expected:
        raise CheckpointError(f"blob holds {blob.size} floats, manifest lists {expected}")
    if [n for n, _ in tensors] != list(params):
        raise CheckpointError("manifest tensor names do not match the model built from its config")
    offset = 0
    for name, shape in tensors:
        n = int(np.prod(shape))
        target = params[name]
        if target.shape != shape:
            raise CheckpointError(f"tensor {name}: manifest shape {shape} != model shape {target.shape}")
        target.data[...] = blob[offset:offset + n].reshape(shape)
        offset += n
    return model
