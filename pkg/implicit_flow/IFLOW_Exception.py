"""
SPDX-License-Identifier: BSD-2
"""

from .types import IFLOW_LAYER, IFLOW_RC, RC_LAYER_SHIFT, RC_ERROR_MASK


class IFLOW_Exception(RuntimeError):
    RC_LAYER_SHIFT = RC_LAYER_SHIFT
    RC_ERROR_MASK = RC_ERROR_MASK

    def __init__(
        self,
        rc,
        detail=None,
        index=None,
        iteration=None,
        field=None,
        line=None,
        shapes=None,
        values=None,
    ):
        self.rc = rc
        self.layer = (rc >> self.RC_LAYER_SHIFT) & 0xFF
        self.error = rc & self.RC_ERROR_MASK
        self.index = index
        self.iteration = iteration
        self.field = field
        self.line = line
        self.shapes = shapes
        self.values = values
        self.detail = detail

        errmsg = f"{IFLOW_LAYER.describe(self.layer)}: {IFLOW_RC.describe(self.error)}"
        extra = self._format_extra()
        if detail:
            errmsg = f"{errmsg}: {detail}"
        if extra:
            errmsg = f"{errmsg} ({extra})"
        super(IFLOW_Exception, self).__init__(errmsg)

    def _format_extra(self):
        parts = []
        if self.line is not None:
            parts.append(f"line {self.line}")
        if self.field is not None:
            parts.append(f"field {self.field}")
        if self.index is not None:
            parts.append(f"index {self.index}")
        if self.iteration is not None:
            parts.append(f"iteration {self.iteration}")
        if self.shapes is not None:
            parts.append("shapes " + " vs ".join(str(tuple(s)) for s in self.shapes))
        if self.values is not None:
            parts.append("values " + ", ".join(repr(v) for v in self.values))
        return ", ".join(parts)
