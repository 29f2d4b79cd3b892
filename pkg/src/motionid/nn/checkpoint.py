"""
Model checkpoints: one .npz archive holding the model config as JSON plus every
named parameter blob. Reloading is bit-exact.
"""

from pathlib import Path
from typing import Any, Dict, Optional, Tuple
import json
import logging

import numpy as np

from motionid.errors import SchemaError
from motionid.nn.models import Model, model_from_config


logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_CONFIG_KEY = "__config__"


def save_checkpoint(model: Model, path: Path, meta: Optional[Dict[str, Any]] = None) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "model": model.config_dict(),
        "meta": meta or {},
    }
    arrays = dict(model.state_dict())
    arrays[_CONFIG_KEY] = np.frombuffer(json.dumps(doc, sort_keys=True).encode("utf-8"), np.uint8)
    # A file handle stops numpy from appending ".npz" to PATH.
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.debug(f"Saved checkpoint {path=!s}")


def load_checkpoint(path: Path) -> Tuple[Model, Dict[str, Any]]:
    """
    Rebuild the model stored at PATH. Returns the model and the saved metadata.
    """
    with np.load(path, allow_pickle=False) as archive:
        if _CONFIG_KEY not in archive.files:
            raise SchemaError(f"{path} is not a motionid checkpoint")
        doc = json.loads(archive[_CONFIG_KEY].tobytes().decode("utf-8"))
        if doc.get("format_version") != FORMAT_VERSION:
            raise SchemaError(f"{path} has checkpoint version {doc.get('format_version')}")
        state = {name: archive[name] for name in archive.files if name != _CONFIG_KEY}
    model = model_from_config(doc["model"])
    model.load_state_dict(state)
    logger.debug(f"Loaded {doc['model']['kind']} checkpoint {path=!s}")
    return model, doc["meta"]
