import hashlib
import json
from typing import Any

import numpy as np


def generate_hash(payload: Any) -> str:
    if isinstance(payload, list) and all(isinstance(p, str) for p in payload):
        text = ''.join(payload)
    elif isinstance(payload, (dict, list, tuple)):
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    else:
        text = str(payload)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def array_digest(*arrays: np.ndarray) -> str:
    """sha256 over dtype, shape and raw bytes of each array, in order."""
    digest = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(f"{array.dtype.str}{array.shape}".encode('utf-8'))
        digest.update(array.tobytes())
    return digest.hexdigest()
