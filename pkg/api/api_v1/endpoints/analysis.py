from typing import List

from fastapi import APIRouter

from api.dependencies import as_http
from schemas.analysis import RankedItem
from schemas.api import RankRequest
from services.analysis import rank_by_similarity
from services.errors import HandClipError

router = APIRouter()


@router.post("/rank", response_model=List[RankedItem])
def rank(request: RankRequest):
    """
    Order gallery records by cosine similarity to the query feature.
    """
    try:
        return rank_by_similarity(request.query, request.gallery, request.top_k)
    except HandClipError as e:
        raise as_http(e)
