from pydantic import BaseModel, conint


class PromptConfig(BaseModel):
    head: conint(ge=0) = 0
    hand_color: conint(ge=0) = 0
    hand_phrase: conint(ge=0) = 0
    color: conint(ge=0) = 0
    background: conint(ge=0) = 0

    class Config:
        frozen = True

    def as_tuple(self):
        return self.head, self.hand_color, self.hand_phrase, self.color, self.background


class Prompt(BaseModel):
    text: str
    config: PromptConfig

    class Config:
        frozen = True
