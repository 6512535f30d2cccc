from fastapi import APIRouter

from app.models.schemas import MethodInfo
from app.services.method_registry import list_methods

router = APIRouter(prefix="/api/methods", tags=["methods"])


@router.get("", response_model=list[MethodInfo])
async def get_methods():
    """Every registered benchmark method."""
    return list_methods()
