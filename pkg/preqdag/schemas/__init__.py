from preqdag.schemas.base import ErrorCode, ExitCode
from preqdag.schemas.graph import DagModel
from preqdag.schemas.neural import MlpCpdConfig
from preqdag.schemas.run import Manifest, RunConfig

__all__ = [
    "ErrorCode",
    "ExitCode",
    "DagModel",
    "MlpCpdConfig",
    "Manifest",
    "RunConfig",
]
