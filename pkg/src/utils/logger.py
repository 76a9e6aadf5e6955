"""
Logging utilities for qswitch

Provides two kinds of logging:
1. SystemLogger: standard Python logging for library and pipeline events
2. CheckLogger: identity / invariant gate results appended to CSV
"""

import logging
import os
import csv
import threading
from datetime import datetime
from pathlib import Path
from typing import Optional, List, Dict


CONSOLE_FORMAT = '[%(asctime)s] [%(levelname)s] [%(name)s] %(message)s'
FILE_FORMAT = '[%(asctime)s] [%(levelname)s] [%(name)s] [%(funcName)s:%(lineno)d] %(message)s'


def _log_dir() -> Path:
    return Path(os.getenv("QSWITCH_LOG_DIR", "logs"))


class SystemLogger(logging.LoggerAdapter):
    """
    Console (INFO) plus per-name file (DEBUG) logging for pipeline events

    Handlers are attached once per logger name; the file lives in
    $QSWITCH_LOG_DIR (default logs/).
    """

    def __init__(self, name: str, log_level: str = "INFO"):
        logger = logging.getLogger(name)
        logger.setLevel(getattr(logging, log_level.upper()))
        if not logger.handlers:
            log_dir = _log_dir()
            log_dir.mkdir(parents=True, exist_ok=True)
            for handler, level, fmt in (
                (logging.StreamHandler(), logging.INFO, CONSOLE_FORMAT),
                (logging.FileHandler(log_dir / f"{name.replace('.', '_')}.log"), logging.DEBUG, FILE_FORMAT),
            ):
                handler.setLevel(level)
                handler.setFormatter(logging.Formatter(fmt, datefmt='%Y-%m-%d %H:%M:%S'))
                logger.addHandler(handler)
            # the CLI configures the root logger too
            logger.propagate = False
        super().__init__(logger, {})


class CheckLogger:
    """Logger for identity and invariant gates"""

    HEADERS = [
        'timestamp',
        'run_label',
        'check',
        'value',
        'tolerance',
        'passed'
    ]

    def __init__(self, output_path: Optional[str] = None):
        """
        Initialize check logger

        Args:
            output_path: Path to CSV file (default: checks_log.csv in the log directory)
        """
        self.output_path = Path(output_path) if output_path else _log_dir() / "checks_log.csv"
        self._lock = threading.Lock()

        self.output_path.parent.mkdir(parents=True, exist_ok=True)

        if not self.output_path.exists():
            with self._lock:
                with open(self.output_path, 'w', newline='', encoding='utf-8') as f:
                    csv.writer(f).writerow(self.HEADERS)

    def log_check(
        self,
        run_label: str,
        check: str,
        value: float,
        tolerance: float,
        timestamp: Optional[str] = None
    ) -> bool:
        """
        Append one gate result

        Args:
            run_label: Experiment or run identifier
            check: Gate name (e.g. direct_residual, linearization_residual)
            value: Measured value
            tolerance: Threshold the value must not exceed

        Returns:
            True if value <= tolerance
        """
        passed = bool(value <= tolerance)
        row = [
            timestamp or datetime.now().isoformat(),
            run_label,
            check,
            f"{value:.6e}",
            f"{tolerance:.1e}",
            passed
        ]

        # Thread-safe CSV writing
        with self._lock:
            with open(self.output_path, 'a', newline='', encoding='utf-8') as f:
                csv.writer(f).writerow(row)

        return passed

    def get_checks(self, run_label: Optional[str] = None) -> List[Dict[str, str]]:
        """
        Retrieve logged gates

        Args:
            run_label: Optional run label to filter by

        Returns:
            List of row dictionaries
        """
        if not self.output_path.exists():
            return []

        with open(self.output_path, 'r', encoding='utf-8') as f:
            rows = list(csv.DictReader(f))

        if run_label is not None:
            rows = [r for r in rows if r['run_label'] == run_label]
        return rows

    def all_passed(self, run_label: Optional[str] = None) -> bool:
        """True when every logged gate (optionally for one run) passed"""
        return all(r['passed'] == 'True' for r in self.get_checks(run_label))
