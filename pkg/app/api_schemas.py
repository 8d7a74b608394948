from typing import Optional

from pydantic import BaseModel


class ActionRequest(BaseModel):
    action_id: str
    config_path: Optional[str] = None
    run_in_background: bool = False
    config_overrides: dict = None
