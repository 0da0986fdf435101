from fastapi import APIRouter

from api.api_v1.endpoints import analysis, poses, prompts

api_router = APIRouter()
api_router.include_router(prompts.router, prefix="/prompts", tags=["prompts"])
api_router.include_router(poses.router, prefix="/poses", tags=["poses"])
api_router.include_router(analysis.router, prefix="/analysis", tags=["analysis"])
