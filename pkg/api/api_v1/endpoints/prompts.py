from typing import Dict, List

from fastapi import APIRouter, Query

from api.dependencies import as_http
from schemas.api import PromptList
from schemas.prompt import Prompt
from services.errors import HandClipError
from services.prompt_gen import N_PROMPTS, config_from_index, list_options, render_prompt, sample_prompts

router = APIRouter()


@router.get("/", response_model=PromptList)
def get_prompts(
    count: int = Query(10, ge=0, le=N_PROMPTS),
    seed: int = 0,
):
    """
    Sample prompts from the full prompt space.
    """
    return PromptList(total=N_PROMPTS, prompts=sample_prompts(count, seed))


@router.get("/options", response_model=Dict[str, List[str]])
def get_options():
    return list_options()


@router.get("/{index}", response_model=Prompt)
def get_prompt(index: int):
    try:
        return render_prompt(config_from_index(index))
    except HandClipError as e:
        raise as_http(e)
