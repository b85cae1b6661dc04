"""Simulator and model checker for recoverable abortable mutual exclusion locks."""

from .adaptive import AdaptiveLock
from .checker import (Caps, ExploreConfig, LockConfig, RandomConfig, Report, build, check_properties,
                      explore, random_run, run_decisions)
from .counterexamples import FaultyWPort, starvation_scenario
from .kernel import ConfigError, Machine, check_wellformed, read_trace, write_trace
from .memory import HarnessFault, Memory
from .reclamation import OracleAllocator, SlotPool
from .tree import TreeLock
from .wport import LockStatus, WPortLock, next_port

__all__ = [
    "AdaptiveLock", "Caps", "ConfigError", "ExploreConfig", "FaultyWPort", "HarnessFault", "LockConfig",
    "LockStatus", "Machine", "Memory", "OracleAllocator", "RandomConfig", "Report", "SlotPool", "TreeLock",
    "WPortLock", "build", "check_properties", "check_wellformed", "explore", "next_port", "random_run",
    "read_trace", "run_decisions", "starvation_scenario", "write_trace",
]
