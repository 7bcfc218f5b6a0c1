# src/tensorcore/scope.py
from typing import Callable, Dict, Optional

import numpy as np

from src.tensorcore.autodiff import Tape, Var


class ParamScope:
    """
    Binds named arrays to one tape, once each.

    Names accepted by ``trainable`` become parameter leaves (gradients are
    reported for them); everything else is bound as a constant.
    """

    def __init__(self, tape: Optional[Tape] = None, trainable: Optional[Callable[[str], bool]] = None):
        self.tape = tape if tape is not None else Tape()
        self.trainable = trainable or (lambda name: False)
        self._bound: Dict[str, Var] = {}

    def get(self, name: str, value: np.ndarray) -> Var:
        var = self._bound.get(name)
        if var is None:
            if self.tape.record_enabled and self.trainable(name):
                var = self.tape.param(value, name)
            else:
                var = self.tape.const(value)
            self._bound[name] = var
        return var

    def const(self, value: np.ndarray) -> Var:
        return self.tape.const(value)

    @classmethod
    def evaluation(cls) -> "ParamScope":
        """Scope on a non-recording tape."""
        return cls(Tape(record=False))

    @classmethod
    def all_trainable(cls) -> "ParamScope":
        return cls(Tape(), lambda name: True)
