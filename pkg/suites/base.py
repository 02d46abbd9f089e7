"""Base class for all acceptance suites."""

from abc import ABC, abstractmethod
from typing import Any

import pandas as pd

from levy2b.config import ProblemConfig
from levy2b.report import verdict


class Suite(ABC):
    """Base class for experiment suites run against one problem configuration."""

    # Subclasses should override these
    name: str = "base"
    description: str = "Base suite"

    def __init__(self, config: ProblemConfig):
        """
        Initialize the suite with a validated configuration.

        Args:
            config: Problem configuration loaded by levy2b.config.load_config
        """
        self.config = config
        self.outputs: dict[str, Any] = {}
        self.diffs: dict[str, Any] = {}
        self.verdicts: dict[str, dict[str, Any]] = {}
        self.tables: dict[str, pd.DataFrame] = {}

    @property
    def tol(self) -> dict[str, float]:
        return self.config.run.tolerances

    def check(self, criterion: str, passed: bool, **details: Any) -> bool:
        self.verdicts[criterion] = verdict(passed, **details)
        return bool(passed)

    def result(self) -> dict[str, Any]:
        return {"outputs": self.outputs, "diffs": self.diffs, "verdicts": self.verdicts}

    @abstractmethod
    def run(self) -> dict[str, Any]:
        """
        Run the suite.

        Returns:
            A dict with "outputs", "diffs" and "verdicts" (criterion -> {"pass": bool, ...}),
            or {"error": message} when the suite could not complete.
        """
        pass
