"""
Dataset Service

An n x D value matrix (categorical indices or reals) with node names and an
optional n x D intervention mask, plus CSV I/O for both.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from preqdag.utils.exceptions import DataException, ValidationException
from preqdag.utils.io import PathLike, atomic_write_text, git_blob_hash

logger = logging.getLogger(__name__)

DataKind = Literal["auto", "categorical", "continuous"]


@dataclass
class Dataset:
    """
    Samples in row order.

    ``cardinalities`` is set for categorical data (one entry per node) and
    ``None`` for continuous data. ``mask[i, d]`` marks row ``i`` as the result of
    an intervention on node ``d``.
    """

    names: Tuple[str, ...]
    values: np.ndarray
    cardinalities: Optional[Tuple[int, ...]] = None
    mask: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.names = tuple(self.names)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise ValidationException(
                f"values must have shape (n, {len(self.names)}), got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DataException("dataset contains non-finite values")
        if self.cardinalities is not None:
            self.cardinalities = tuple(int(c) for c in self.cardinalities)
            if len(self.cardinalities) != len(self.names):
                raise ValidationException("one cardinality per node is required")
            if np.any(self.values != np.round(self.values)):
                raise DataException("categorical values must be integer indices")
            for d, card in enumerate(self.cardinalities):
                column = self.values[:, d]
                if column.size and (column.min() < 0 or column.max() >= card):
                    raise DataException(
                        f"values of '{self.names[d]}' fall outside [0, {card})"
                    )
        if self.mask is None:
            self.mask = np.zeros(self.values.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != self.values.shape:
                raise ValidationException(
                    f"mask shape {self.mask.shape} does not match values {self.values.shape}"
                )

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def is_categorical(self) -> bool:
        return self.cardinalities is not None

    def column(self, d: int) -> np.ndarray:
        if self.is_categorical:
            return self.values[:, d].astype(np.int64)
        return self.values[:, d]

    def columns(self, nodes: Sequence[int]) -> np.ndarray:
        """Values of ``nodes`` as an (n, len(nodes)) array"""
        block = self.values[:, list(nodes)]
        return block.astype(np.int64) if self.is_categorical else block

    def permuted(self, order: np.ndarray) -> "Dataset":
        return Dataset(self.names, self.values[order], self.cardinalities, self.mask[order])

    def with_mask(self, mask: np.ndarray) -> "Dataset":
        return Dataset(self.names, self.values, self.cardinalities, mask)

    def content_hash(self) -> str:
        header = json.dumps(
            {"names": list(self.names), "cardinalities": self.cardinalities, "shape": list(self.values.shape)},
            sort_keys=True,
        ).encode("utf-8")
        payload = header + self.values.tobytes() + np.packbits(self.mask).tobytes()
        return git_blob_hash(payload)

    # CSV I/O

    def to_frame(self) -> pd.DataFrame:
        data = self.values.astype(np.int64) if self.is_categorical else self.values
        return pd.DataFrame(data, columns=list(self.names))

    def write_csv(self, path: PathLike, mask_path: Optional[PathLike] = None) -> None:
        atomic_write_text(path, self.to_frame().to_csv(index=False, float_format="%.17g"))
        if mask_path is not None:
            frame = pd.DataFrame(self.mask.astype(np.int64), columns=list(self.names))
            atomic_write_text(mask_path, frame.to_csv(index=False))


def mask_path_for(data_path: PathLike) -> Path:
    """Sibling mask file: ``data.csv`` -> ``data.mask.csv``"""
    path = Path(data_path)
    return path.with_name(f"{path.stem}.mask{path.suffix or '.csv'}")


def read_csv(
    path: PathLike,
    mask_path: Optional[PathLike] = None,
    kind: DataKind = "auto",
    cardinalities: Optional[Sequence[int]] = None,
) -> Dataset:
    """
    Load a dataset written by :meth:`Dataset.write_csv`.

    Explicit ``cardinalities`` make the data categorical. Otherwise, with
    ``kind="auto"`` the data is categorical iff every column holds integers,
    and cardinalities are inferred as ``max + 1`` (categories never observed
    above the maximum are lost).
    """
    if cardinalities is not None and kind == "continuous":
        raise DataException("cardinalities were given for continuous data")
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataException(f"cannot read dataset '{path}': {exc}") from exc
    names = tuple(str(c) for c in frame.columns)
    if not names:
        raise DataException(f"dataset '{path}' has no columns")
    try:
        values = frame.to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataException(f"dataset '{path}' contains non-numeric values") from exc

    if cardinalities is not None:
        if len(cardinalities) != len(names):
            raise DataException(f"{len(cardinalities)} cardinalities given for {len(names)} columns")
        categorical = True
    elif kind == "auto":
        categorical = all(pd.api.types.is_integer_dtype(frame[c]) for c in frame.columns)
    else:
        categorical = kind == "categorical"
    if categorical:
        if values.size and values.min() < 0:
            raise DataException("categorical values must be non-negative")
        if cardinalities is None:
            cardinalities = tuple(int(values[:, d].max()) + 1 if len(values) else 1 for d in range(len(names)))
        cardinalities = tuple(int(c) for c in cardinalities)

    mask = None
    if mask_path is not None:
        try:
            mask_frame = pd.read_csv(mask_path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise DataException(f"cannot read mask '{mask_path}': {exc}") from exc
        if tuple(str(c) for c in mask_frame.columns) != names:
            raise DataException("mask header does not match the dataset header")
        mask = mask_frame.to_numpy() != 0
    logger.info("Loaded %d rows x %d nodes from %s", len(values), len(names), path)
    return Dataset(names, values, cardinalities, mask)
