"""
Black-Box Target Component for the ensemble attack toolkit
Wraps held-out models behind a label-only query interface that stands in for a speech API
"""

import threading
import logging
from typing import Callable, Dict, List, Sequence

from .audio_core import AudioClip
from .errors import PreconditionError

# Configure logging
logger = logging.getLogger(__name__)


class BlackBoxTarget:
    """Label-only view of a trained model with an atomic query counter"""

    __slots__ = ("name", "n_classes", "_predict", "_lock", "_queries")

    def __init__(self, name: str, model):
        """
        Hide a trained model behind query()

        Args:
            name: Target name used in reports
            model: Trained surrogate; only its predict() is captured
        """
        if not getattr(model, "trained", False):
            raise PreconditionError(f"black-box target {name} wraps an untrained model")
        self.name = name
        self.n_classes = model.n_classes
        predict = model.predict
        self._predict: Callable[[AudioClip], int] = lambda clip: int(predict(clip))
        self._lock = threading.Lock()
        self._queries = 0

    @property
    def queries(self) -> int:
        return self._queries

    def query(self, clip: AudioClip) -> int:
        """Top-1 label of the hidden model; counts the call"""
        with self._lock:
            self._queries += 1
        return self._predict(clip)

    def __repr__(self) -> str:
        return f"BlackBoxTarget(name={self.name!r}, queries={self._queries})"


def query_targets(targets: Sequence[BlackBoxTarget], clip: AudioClip) -> Dict[str, int]:
    """Query every target once; returns name -> label"""
    return {t.name: t.query(clip) for t in targets}


def create_targets(models: Sequence, names: Sequence[str] = ()) -> List[BlackBoxTarget]:
    """
    Wrap trained models as black-box targets

    Args:
        models: Trained models
        names: Optional names; model names are used when omitted

    Returns:
        List[BlackBoxTarget]: One target per model
    """
    names = list(names) or [m.name for m in models]
    targets = [BlackBoxTarget(n, m) for n, m in zip(names, models)]
    logger.info(f"Created {len(targets)} black-box targets: {[t.name for t in targets]}")
    return targets
