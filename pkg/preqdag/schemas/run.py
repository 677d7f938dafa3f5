from pydantic import BaseModel, Field, field_validator
from typing import Any, Dict, List, Literal, Optional

from preqdag.schemas.neural import MlpCpdConfig


class TabularConfig(BaseModel):
    alpha: float = Field(default=0.5, gt=0.0)


class ScheduleConfig(BaseModel):
    blocks: Optional[int] = Field(default=None, ge=2)
    first_split: Optional[int] = Field(default=None, ge=1)


class SearchConfig(BaseModel):
    mode: Literal["exhaustive", "hillclimb"] = "exhaustive"
    max_parents: Optional[int] = Field(default=None, ge=0)
    restarts: int = Field(default=3, ge=1)


class RunConfig(BaseModel):
    """Fully resolved configuration of one command invocation"""
    subcommand: Literal["gen", "score", "search", "trace"]
    data_path: Optional[str] = None
    mask_path: Optional[str] = None
    cardinalities: Optional[List[int]] = None
    model: Literal["tabular", "neural"] = "tabular"
    tabular: TabularConfig = Field(default_factory=TabularConfig)
    neural: MlpCpdConfig = Field(default_factory=MlpCpdConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    search: SearchConfig = Field(default_factory=SearchConfig)
    seeds: List[int] = Field(default_factory=lambda: [0])
    workers: int = Field(default=1, ge=1)
    out_dir: str = "."
    extra: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("seeds")
    @classmethod
    def seeds_nonempty(cls, seeds: List[int]) -> List[int]:
        if not seeds:
            raise ValueError("at least one seed is required")
        return seeds

    @field_validator("cardinalities")
    @classmethod
    def cardinalities_positive(cls, cards: Optional[List[int]]) -> Optional[List[int]]:
        if cards is not None and (not cards or any(c < 1 for c in cards)):
            raise ValueError("cardinalities must be a nonempty list of positive integers")
        return cards


class Manifest(BaseModel):
    """Record of one command run: configuration, input hashes and outputs"""
    tool: str
    version: str
    command: str
    config: Dict[str, Any]
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
