"""kolnet: learn parametric Kolmogorov PDE solution maps from simulated SDE data.

A single network is trained on a never-repeating stream of simulated pairs
(predictor point, payoff of the SDE terminal state) so that its regression
function is the parametric PDE solution map. The package ships the four
benchmark problem families, the multilevel network architecture, a from-scratch
reverse-mode tape, AdamW training, relative-L1 evaluation with analytic or
Monte Carlo references, Greeks, calibration, and executable checks of the
underlying identities (Feynman-Kac regression, Euler-Maruyama rate,
constructive ReLU approximants).
"""

__version__ = "0.1.0"

from .problems import build_problem, PROBLEM_NAMES  # noqa: F401
