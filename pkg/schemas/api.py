from typing import List, Optional

from pydantic import BaseModel, conint

from schemas.analysis import FeatureRecord
from schemas.prompt import Prompt


class PromptList(BaseModel):
    total: int
    prompts: List[Prompt]


class Pose3D(BaseModel):
    """Root-relative joints in canonical units (wrist-to-middle-MCP length = 1)."""
    joint_names: List[str]
    joints: List[List[float]]


class RankRequest(BaseModel):
    query: List[float]
    gallery: List[FeatureRecord]
    top_k: Optional[conint(ge=1)] = None
