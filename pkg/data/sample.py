from dataclasses import dataclass, field

import numpy as np

from schemas.sample import SampleMeta

IMAGE_SIZE = 256


@dataclass(frozen=True)
class Sample:
    """
    One annotated hand image.

    image is 256x256x3 float32 in [0, 1]; joints3d is 21x3, root-relative and
    divided by the wrist-to-middle-MCP length; joints2d is 21x2 in pixels.
    """
    image: np.ndarray
    joints3d: np.ndarray
    joints2d: np.ndarray
    meta: SampleMeta
    visible: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.visible is None:
            inside = np.all((self.joints2d >= 0) & (self.joints2d < IMAGE_SIZE), axis=1)
            object.__setattr__(self, 'visible', inside)

    @property
    def sample_id(self) -> str:
        return self.meta.sample_id
