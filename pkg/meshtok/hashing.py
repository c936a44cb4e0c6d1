import hashlib
import json
from typing import Any, Dict, Iterable, Union

import numpy as np
import torch


FINGERPRINT_LENGTH = 16


def _update_with_array(digest, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    digest.update(str(array.dtype).encode())
    digest.update(str(array.shape).encode())
    digest.update(array.tobytes())


def array_fingerprint(arrays: Iterable[np.ndarray], metadata: Union[Dict[str, Any], None] = None) -> str:
    """Stable hex fingerprint over a sequence of arrays and optional JSON metadata."""
    digest = hashlib.sha256()
    if metadata is not None:
        digest.update(json.dumps(metadata, sort_keys=True).encode())
    for array in arrays:
        _update_with_array(digest, np.asarray(array))
    return digest.hexdigest()[:FINGERPRINT_LENGTH]


def state_dict_fingerprint(state: Union[torch.nn.Module, Dict[str, torch.Tensor]]) -> str:
    """Bit-exact checksum over every parameter and buffer, keyed by name."""
    if isinstance(state, torch.nn.Module):
        state = state.state_dict()
    digest = hashlib.sha256()
    for name in sorted(state.keys()):
        digest.update(name.encode())
        tensor = state[name].detach().cpu()
        if tensor.dtype == torch.bfloat16:
            tensor = tensor.float()
        _update_with_array(digest, tensor.numpy())
    return digest.hexdigest()[:FINGERPRINT_LENGTH]
