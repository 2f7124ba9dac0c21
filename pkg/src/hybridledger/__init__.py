"""Hybrid object ledger: a broadcast fast path for owned objects, consensus for shared ones."""

from .committee import Committee
from .simnet import ClientSpec, CrashSpec, Scenario, run
from .validator import Validator

__all__ = ["Committee", "ClientSpec", "CrashSpec", "Scenario", "Validator", "run"]
__version__ = "0.1.0"
