"""
I/O utilities
JSON/CSV writing with numpy support and content hashing for configs
"""

from pathlib import Path
import json
import hashlib
import logging
from typing import Dict, Any, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class NumpyEncoder(json.JSONEncoder):
    """Numpy-aware JSON encoder"""
    def default(self, obj):
        if isinstance(obj, np.integer):
            return int(obj)
        elif isinstance(obj, np.floating):
            return float(obj)
        elif isinstance(obj, np.ndarray):
            return obj.tolist()
        elif isinstance(obj, np.bool_):
            return bool(obj)
        return super().default(obj)


def to_json(data: Any) -> str:
    """Deterministic JSON text (sorted keys, fixed indent, trailing newline)"""
    return json.dumps(data, indent=2, sort_keys=True, cls=NumpyEncoder) + "\n"


def content_hash(data: Any) -> str:
    """SHA256 of the canonical JSON form of a config-like object"""
    canonical = json.dumps(data, sort_keys=True, separators=(',', ':'), cls=NumpyEncoder)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def compute_file_hash(file_path: Path) -> str:
    """SHA256 of a file's bytes"""
    sha256 = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(8192), b''):
            sha256.update(chunk)
    return sha256.hexdigest()


def load_json_safe(file_path: Union[str, Path]) -> Dict:
    """Load a JSON document"""
    file_path = Path(file_path)
    with open(file_path, 'r', encoding='utf-8') as f:
        return json.load(f)


def save_json_safe(data: Any, file_path: Union[str, Path]) -> Path:
    """Write JSON (numpy types supported), creating parent directories"""
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, 'w', encoding='utf-8') as f:
        f.write(to_json(data))
    logger.info(f"JSON saved: {file_path}")
    return file_path


def save_csv_safe(
    df: pd.DataFrame,
    file_path: Union[str, Path],
    index: bool = False,
    float_format: str = '%.12g',
    **kwargs,
) -> Path:
    """Write a DataFrame as CSV with a fixed float format"""
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(file_path, index=index, encoding='utf-8', float_format=float_format, lineterminator='\n', **kwargs)
    logger.info(f"CSV saved: {file_path} ({len(df)} rows)")
    return file_path


def save_matrix_csv(matrix: np.ndarray, file_path: Union[str, Path]) -> Path:
    """Write a dense matrix as a headerless CSV; %.17g round-trips every double"""
    return save_csv_safe(pd.DataFrame(np.asarray(matrix)), file_path, header=False, float_format='%.17g')
