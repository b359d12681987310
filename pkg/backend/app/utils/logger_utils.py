import json
import os
import sys
from pathlib import Path
from typing import Any

from loguru import logger

DEFAULT_LOGLEVEL = os.getenv("PECF_LOGLEVEL", "INFO")


def configure_logging(level: str | None = None) -> None:
    """Route loguru to stderr at the requested level (env PECF_LOGLEVEL by default)."""
    logger.remove()
    logger.add(
        sys.stderr,
        level=(level or DEFAULT_LOGLEVEL).upper(),
        format="{time:YYYY-MM-DD HH:mm:ss} {level} {name} {message}",
    )


def save_json_log(folder: str | Path, name: str, data: Any) -> Path:
    """Save any object as a JSON log under <folder>/<name>.json"""

    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)

    file_path = folder / f"{name}.json"

    # sorted keys keep artifacts byte-identical across reruns
    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")

    logger.info(f"[LOG] Saved → {file_path}")
    return file_path


def write_key_values(path: str | Path, values: dict[str, Any]) -> Path:
    """Write a flat key=value text block (dataset manifests, summaries)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_key_values(values))
    return path


def format_key_values(values: dict[str, Any]) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = f"{value:.10g}"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
