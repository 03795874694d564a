import os
import json
import math
import hashlib
import logging
import datetime
from typing import Any, Dict

from src.core.error_handler import ConfigError

logger = logging.getLogger(__name__)

HASH_BUFFER_SIZE = 1 << 20


class FileUtils:
    """Small helpers for the files written by the pipeline."""

    @staticmethod
    def ensure_directory(dir_path: str) -> str:
        os.makedirs(dir_path, exist_ok=True)
        return dir_path

    @staticmethod
    def read_json_file(file_path: str, encoding: str = "utf-8") -> Dict[str, Any]:
        """
        Read a JSON document.

        Args:
            file_path (str): Path to the file
            encoding (str): Text encoding

        Returns:
            Dict[str, Any]: Parsed document

        Raises:
            ConfigError: missing file or malformed JSON
        """
        try:
            with open(file_path, "r", encoding=encoding) as f:
                return json.load(f)
        except FileNotFoundError as exc:
            raise ConfigError(f"file not found: {file_path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {file_path}: {exc}") from exc

    @staticmethod
    def write_json_file(file_path: str, data: Dict[str, Any], encoding: str = "utf-8", indent: int = 2) -> str:
        parent = os.path.dirname(file_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(file_path, "w", encoding=encoding) as f:
            json.dump(_json_safe(data), f, indent=indent, ensure_ascii=False)
        return file_path

    @staticmethod
    def append_json_line(file_path: str, record: Dict[str, Any], encoding: str = "utf-8") -> None:
        with open(file_path, "a", encoding=encoding) as f:
            f.write(json.dumps(_json_safe(record), ensure_ascii=False))
            f.write("\n")

    @staticmethod
    def get_file_hash(file_path: str, algorithm: str = "sha256") -> str:
        hash_func = getattr(hashlib, algorithm)()
        with open(file_path, "rb") as f:
            while chunk := f.read(HASH_BUFFER_SIZE):
                hash_func.update(chunk)
        return hash_func.hexdigest()


class TimeUtils:
    """Helpers for timestamps in run records."""

    @staticmethod
    def utc_now_iso() -> str:
        return datetime.datetime.now(datetime.timezone.utc).isoformat()

    @staticmethod
    def humanize_duration(seconds: float) -> str:
        seconds = max(0, int(seconds))
        periods = [
            ('d', 86400),
            ('h', 3600),
            ('m', 60),
            ('s', 1)
        ]
        parts = []
        for suffix, length in periods:
            value, seconds = divmod(seconds, length)
            if value or suffix == 's':
                parts.append(f'{value}{suffix}')
        return ' '.join(parts)


def derive_seed(*parts: Any) -> int:
    """Deterministic 63-bit seed from an ordered tuple of values."""
    text = ":".join(str(part) for part in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def parse_dose(value: Any) -> float:
    """Dose from JSON/CLI input; "inf" and "Infinity" select the infinite-dose sentinel."""
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("inf", "infinity", "+inf"):
            return math.inf
        try:
            return float(text)
        except ValueError as exc:
            raise ConfigError(f"invalid dose: {value!r}") from exc
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid dose: {value!r}") from exc


def _json_safe(value: Any) -> Any:
    """Replace non-finite floats by strings so the output stays strict JSON."""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return None
        return value
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if hasattr(value, "item") and callable(value.item) and getattr(value, "ndim", 1) == 0:
        return _json_safe(value.item())
    if hasattr(value, "tolist"):
        return _json_safe(value.tolist())
    return value
