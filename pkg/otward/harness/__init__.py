from .contamination import ContaminationKind
from .contamination import ContaminationSpec
from .contamination import contaminate
from .contamination import dilution_factor
from .contamination import rank1_sensitivity
from .contamination import self_normalise
from .factorial import factorial_decomposition
from .factorial import FactorDecomposition
from .factorial import log_normalise
from .factorial import run_factorial
from .sweeps import eps_sweep
from .tables import write_manifest
from .tables import write_table
from .theory import check_theorem1
from .theory import contaminated_moments
from .theory import corollary_ratio
from .theory import corollary_trend
from .theory import fad_rank1_closed_form
from .theory import order_statistic_bound
from .theory import SpectrumSpec
from .theory import TheoremOneReport
from ..utils import spearman


__all__ = [
    "check_theorem1",
    "contaminate",
    "contaminated_moments",
    "ContaminationKind",
    "ContaminationSpec",
    "corollary_ratio",
    "corollary_trend",
    "dilution_factor",
    "eps_sweep",
    "factorial_decomposition",
    "FactorDecomposition",
    "fad_rank1_closed_form",
    "log_normalise",
    "order_statistic_bound",
    "rank1_sensitivity",
    "run_factorial",
    "self_normalise",
    "spearman",
    "SpectrumSpec",
    "TheoremOneReport",
    "write_manifest",
    "write_table",
]
