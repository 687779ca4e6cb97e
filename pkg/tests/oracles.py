"""Independent reference computations shared by the test modules."""

import numpy as np
from scipy.integrate import solve_ivp

from flightenv.model import _derivative, isa_density

MARGINAL_BAND = 1e-3  # 1/s


def simulate_perturbation(trim, params, norm=1e-4, T=30.0, dt=0.05, seed=0):
    """Nonlinear time-march of a randomly perturbed trim; returns (t, dx)."""
    x0 = trim.state.as_array()
    u = tuple(trim.controls.as_array())
    rho = isa_density(trim.state.h)
    rng = np.random.default_rng(seed)
    d = rng.standard_normal(8)
    d *= norm / np.linalg.norm(d)
    t_eval = np.arange(0.0, T + 1e-9, dt)
    sol = solve_ivp(lambda t, x: _derivative(tuple(x), u, rho, params), (0.0, T), x0 + d,
                    t_eval=t_eval, rtol=1e-11, atol=1e-14, method="DOP853")
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.t, sol.y - x0[:, None]


def fitted_growth_rate(dx, dt):
    """Largest growth rate of the least-squares linear propagator fitted to samples."""
    X, Y = dx[:, :-1], dx[:, 1:]
    U, S, Vh = np.linalg.svd(X, full_matrices=False)
    k = int((S > 1e-9 * S[0]).sum())
    Ad = U[:, :k].T @ Y @ Vh[:k].T @ np.diag(1.0 / S[:k])
    mu = np.linalg.eigvals(Ad).astype(complex)
    return float((np.log(mu) / dt).real.max())


def march_verdict(trim, params, seed=0, band=MARGINAL_BAND):
    """'decay', 'growth' or 'marginal' from the 30 s perturbation time-march."""
    t, dx = simulate_perturbation(trim, params, seed=seed)
    rate = fitted_growth_rate(dx, t[1] - t[0])
    if rate > band:
        return "growth", rate
    if rate < -band:
        return "decay", rate
    return "marginal", rate
