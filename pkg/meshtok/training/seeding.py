import logging
import os
import random

import numpy as np
import torch

logger = logging.getLogger(__name__)

DETERMINISTIC_ENV = "MESHTOK_DETERMINISTIC"


def deterministic_requested(flag: bool = False) -> bool:
    return flag or os.environ.get(DETERMINISTIC_ENV, "") == "1"


def seed_everything(seed: int, deterministic: bool = False) -> torch.Generator:
    """Seed python, numpy and torch; return a generator for data order.

    Deterministic mode also restricts torch to deterministic kernels and a single thread,
    which is slower.
    """
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic_requested(deterministic):
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False
        torch.set_num_threads(1)
        logger.info("Deterministic mode on (seed %d)", seed)
    return torch.Generator().manual_seed(seed)
