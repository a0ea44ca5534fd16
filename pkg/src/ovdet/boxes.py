"""Box conversions between pixel corner (xyxy) and normalized center formats.

External annotations use absolute pixel corners; the model regresses
normalized (cx, cy, w, h) in [0, 1].
"""

from __future__ import annotations

import numpy as np


class BoxError(ValueError):
    """A box violates 0 <= x1 < x2 <= W, 0 <= y1 < y2 <= H."""


def validate_xyxy(boxes, width: float, height: float) -> np.ndarray:
    """Validate and return pixel corner boxes of shape [n, 4]."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    for i, (x1, y1, x2, y2) in enumerate(boxes):
        if not (0.0 <= x1 < x2 <= width and 0.0 <= y1 < y2 <= height):
            raise BoxError(
                f"box {i} ({x1}, {y1}, {x2}, {y2}) invalid for {width}x{height} image"
            )
    return boxes


def xyxy_to_cxcywh(boxes, width: float, height: float) -> np.ndarray:
    """Pixel corners -> normalized centers, each field in [0, 1]."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    out = np.empty_like(boxes)
    out[:, 0] = (boxes[:, 0] + boxes[:, 2]) / 2.0 / width
    out[:, 1] = (boxes[:, 1] + boxes[:, 3]) / 2.0 / height
    out[:, 2] = (boxes[:, 2] - boxes[:, 0]) / width
    out[:, 3] = (boxes[:, 3] - boxes[:, 1]) / height
    return out


def cxcywh_to_xyxy(boxes, width: float = 1.0, height: float = 1.0) -> np.ndarray:
    """Normalized centers -> corners, scaled back to width x height."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    out = np.empty_like(boxes)
    out[:, 0] = (boxes[:, 0] - boxes[:, 2] / 2.0) * width
    out[:, 1] = (boxes[:, 1] - boxes[:, 3] / 2.0) * height
    out[:, 2] = (boxes[:, 0] + boxes[:, 2] / 2.0) * width
    out[:, 3] = (boxes[:, 1] + boxes[:, 3] / 2.0) * height
    return out


def area_xyxy(boxes) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
