from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, confloat


class StyleParams(BaseModel):
    """Synthetic rendering style, worded with the prompt vocabulary."""
    background: str = 'gray'
    hand_color: str = 'peach'
    pattern: Literal['solid', 'gradient', 'texture'] = 'solid'


class SampleMeta(BaseModel):
    sample_id: str
    source: str
    # mm per canonical unit; None when the source has no metric annotation
    scale_mm: Optional[confloat(gt=0)] = None
    intrinsics: Optional[Tuple[float, float, float, float]] = None
    root_mm: Optional[Tuple[float, float, float]] = None
    image_path: Optional[str] = None
    crop_box: Optional[Tuple[float, float, float, float]] = None


class ManifestRecord(BaseModel):
    seed: int
    style: StyleParams
    joints3d: List[List[float]]
    joints2d: List[List[float]]
    meta: SampleMeta
