"""Nonlocal Cahn-Hilliard and porous-medium dynamics on finite random walk spaces."""

__version__ = "0.1.0"

from .walks import (  # noqa: E402
    RandomWalk,
    WalkError,
    convolve,
    from_grid_kernel,
    from_markov_kernel,
    from_point_cloud,
    from_weighted_graph,
    mean_curvature,
    restrict,
)
from .operators import HMinusOneContext, dirichlet_energy, laplacian, spectral_gap  # noqa: E402
from .potentials import (  # noqa: E402
    PotentialSpec,
    custom,
    hele_shaw,
    logarithmic,
    obstacle,
    power_law,
    stefan,
)
from .pme import ResolventProblem, pme_mild_solve, solve_resolvent, validate_mass_window  # noqa: E402
from .cahn_hilliard import CHProblem, energy, lipschitz_bound_G, solve, step_imex  # noqa: E402
from .analysis import audit, check_equilibrium, detect_steady_state, pure_phase_criterion  # noqa: E402

__all__ = [
    "RandomWalk", "WalkError", "convolve", "from_grid_kernel", "from_markov_kernel", "from_point_cloud",
    "from_weighted_graph", "mean_curvature", "restrict", "HMinusOneContext", "dirichlet_energy",
    "laplacian", "spectral_gap", "PotentialSpec", "custom", "hele_shaw", "logarithmic", "obstacle",
    "power_law", "stefan", "ResolventProblem", "pme_mild_solve", "solve_resolvent",
    "validate_mass_window", "CHProblem", "energy", "lipschitz_bound_G", "solve", "step_imex",
    "audit", "check_equilibrium", "detect_steady_state", "pure_phase_criterion",
]
