from pydantic import BaseModel
from typing import List, Optional


class RankingRecord(BaseModel):
    """One row of the ranking JSON"""
    dag_id: int
    dag: List[List[int]]
    dag_text: str
    score_mean: float
    score_std: float
    posterior_weight: float
    shd_to_reference: Optional[int] = None
    in_reference_mec: Optional[bool] = None


class PosteriorReport(BaseModel):
    """Posterior-weighted averages over the visited structures"""
    support_size: int
    pwa_shd: Optional[float] = None
    expected_links: float
