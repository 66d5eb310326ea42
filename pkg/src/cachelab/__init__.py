"""Cache-hierarchy simulator and replacement-policy side-channel lab."""

from .cache import AccessOutcome, CacheAddress, Hierarchy, LineState, decompose
from .config import MachineProfile, load_profile
from .policies import ZOO, make_policy, policy_zoo

__version__ = "0.1.0"

__all__ = ["AccessOutcome", "CacheAddress", "Hierarchy", "LineState", "decompose",
           "MachineProfile", "load_profile", "ZOO", "make_policy", "policy_zoo"]
