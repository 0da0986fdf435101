from fastapi import FastAPI

from api.api import api_router
from config.settings import settings

app = FastAPI(title=settings.app_name)

app.include_router(api_router, prefix=settings.api.api_v1)
