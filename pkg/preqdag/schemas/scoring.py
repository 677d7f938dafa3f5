from pydantic import BaseModel, Field
from typing import Any, Dict, List, Optional


class TrainReportRecord(BaseModel):
    """Outcome of training one neural CPD on one prefix"""
    learning_rate: float
    steps: int
    val_loss: float
    seed: int
    candidates: List[Dict[str, float]] = Field(default_factory=list)


class BlockRecord(BaseModel):
    """Log-loss accumulated over rows [s_k, end) of one split block"""
    s_k: int
    end: int
    loss: float
    train_report: Optional[TrainReportRecord] = None


class EntryRecord(BaseModel):
    node: int
    parents: List[int]
    blocks: List[BlockRecord]
    total: float
    trace: Optional[List[float]] = None


class ScoreTableRecord(BaseModel):
    """Results / cache JSON of one scored dataset replicate"""
    dataset_hash: str
    num_nodes: int
    config_hash: str
    schedule: List[int]
    model: Dict[str, Any]
    seed: int
    entries: List[EntryRecord] = Field(default_factory=list)
