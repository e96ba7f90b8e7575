import os
import json
import time
import logging
from pathlib import Path
from datetime import datetime, timezone
from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)

# Helper function to build a standardized error payload
def build_error_response(code: str, message: str, status: int) -> dict:
    """
    Construct a standardized error payload for command failures.

    Args:
        code (str): A short error code identifier (e.g., "DATA_ERROR").
        message (str): A human-readable error message.
        status (int): Process exit status associated with the error.

    Returns:
        dict: The formatted error, ready to be serialized to JSON.
    """
    return {
        "error": {
            "code": code,
            "message": message,
            "status": status,
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")
        }
    }

# Log the time taken to execute a process
def log_execution_time(start_time: float = None, process_name: str = None) -> float:
    """
    Log the time taken to execute a process.

    Args:
        start_time (float): The timestamp when the process started.
        process_name (str): A descriptive name of the process (e.g., "Epoch 3", "Evaluation").

    Returns:
        float: Elapsed wall time in seconds.
    """
    execution_time = time.time() - start_time
    logger.info(f"{process_name} took {execution_time:.2f} seconds")
    return execution_time

def setup_logging(level: str = None) -> None:
    """
    Configure console logging once for the command-line entry point.

    Args:
        level (str, optional): Log level name; defaults to $DAVE_LOG_LEVEL or INFO.
    """
    level = (level or os.getenv("DAVE_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

def write_json(path: Path, payload) -> str:
    """Write a JSON document with stable key order and return its text."""
    text = json.dumps(payload, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")
    return text
