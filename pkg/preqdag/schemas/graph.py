from pydantic import BaseModel, Field, field_validator
from typing import List, Optional


class DagModel(BaseModel):
    """DAG JSON form: {"num_nodes": D, "edges": [[u, v], ...]}"""
    num_nodes: int = Field(ge=1)
    edges: List[List[int]] = Field(default_factory=list)
    names: Optional[List[str]] = None

    @field_validator("edges")
    @classmethod
    def edges_are_pairs(cls, edges: List[List[int]]) -> List[List[int]]:
        for edge in edges:
            if len(edge) != 2:
                raise ValueError(f"edge {edge} must be a [parent, child] pair")
        return edges
