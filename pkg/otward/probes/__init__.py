from .probe import ProbeSource
from .probe import TripletBatch
from .probe_bag import SyntheticProbes
from .synthetic import PROBE_KINDS
from .synthetic import ProbeConfig


__all__ = ["PROBE_KINDS", "ProbeConfig", "ProbeSource", "SyntheticProbes", "TripletBatch"]
