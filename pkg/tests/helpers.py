import numpy as np

from d2ibc import PolyModel, enumerate_monomials


def make_scalar_linear_model(y_coeff: float, u_coeff: float) -> PolyModel:
    """First-order scalar predictor y' = y_coeff*y + u_coeff*u."""
    basis = enumerate_monomials(2, 1)
    alpha = np.array([[0.0], [y_coeff], [u_coeff]])
    return PolyModel(n=1, n_u=1, n_y=1, basis=basis, alpha=alpha, ridge=0.0)
