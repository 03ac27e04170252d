from .adapter import adapt
from .adapter import AdapterParams
from .adapter import jacobian_probe
from .adapter import load_adapter
from .adapter import ResidualAdapter
from .adapter import save_adapter
from .diagnostics import diagnose
from .diagnostics import DiagnosticsReport
from .embedding_file import read_embeddings
from .embedding_file import write_embeddings
from .linalg import Rng
from .linalg import sym_eigen
from .metrics import EmbeddingSet
from .metrics import exact_ot
from .metrics import fad
from .metrics import fit_moments
from .metrics import kad
from .metrics import KadConfig
from .metrics import sinkhorn_divergence
from .metrics import SinkhornConfig
from .metrics import SinkhornResult
from .scorer import OTAD
from .train import train_adapter
from .train import TrainConfig
from .version import __version__


__all__ = [
    "OTAD",
    "EmbeddingSet",
    "Rng",
    "fit_moments",
    "fad",
    "kad",
    "KadConfig",
    "sinkhorn_divergence",
    "SinkhornConfig",
    "SinkhornResult",
    "exact_ot",
    "sym_eigen",
    "diagnose",
    "DiagnosticsReport",
    "ResidualAdapter",
    "AdapterParams",
    "adapt",
    "jacobian_probe",
    "load_adapter",
    "save_adapter",
    "train_adapter",
    "TrainConfig",
    "read_embeddings",
    "write_embeddings",
    "__version__",
]
