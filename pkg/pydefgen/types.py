from typing import Any, Union

import numpy as np
import numpy.typing as npt

JsonDataType = Union[str, int, float, list, dict, bool, None]

JsonObject = dict[str, Any]
JsonArray = list[JsonObject]

FloatArray = npt.NDArray[np.float64]
IdArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]

Tokens = tuple[str, ...]
Span = tuple[int, int]

__all__ = [
    "JsonObject",
    "JsonArray",
    "FloatArray",
    "IdArray",
    "BoolArray",
    "Tokens",
    "Span",
]
