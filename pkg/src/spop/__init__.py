"""Sparse polynomial optimization via block-structured moment/SOS relaxations."""

from .polyring import (Exponent, FormatError, MonomialBasis, Polynomial,
                       monomial_basis, prod_polys, support_check)
from .sparsity import (RipReport, SparsityPattern, check_rip, connected_cover,
                       csp_graph, mcs_is_chordal, overlaps)
from .relax import (AssemblyError, MomentIndex, SdpProblem, SparsePOP, assemble,
                    build_union_index, densify, min_order)
from .sdpcore import (DimensionCapError, SdpSolution, SdpStandard, SolverError,
                      solve)

__all__ = [
    "Exponent", "FormatError", "MonomialBasis", "Polynomial", "monomial_basis",
    "prod_polys", "support_check",
    "RipReport", "SparsityPattern", "check_rip", "connected_cover", "csp_graph",
    "mcs_is_chordal", "overlaps",
    "AssemblyError", "MomentIndex", "SdpProblem", "SparsePOP", "assemble",
    "build_union_index", "densify", "min_order",
    "DimensionCapError", "SdpSolution", "SdpStandard", "SolverError", "solve",
]
