from pydantic import BaseModel, confloat


class FusionConfig(BaseModel):
    image_ratio: confloat(ge=0.0, le=1.0) = 0.6
    normalize_inputs: bool = True
