"""First-order optimization of scene trajectories and camera poses.

Runs moment-based gradient descent (decay 0.9/0.999 with bias
correction) over every person's egocentric steps and the per-frame
camera pose, recording a per-iteration energy trace.  Camera
quaternions are renormalized after every update; their gradient is
already projected onto the unit-sphere tangent.  Gradients whose
largest entry sits at the float noise floor freeze the iteration so a
converged state is a true fixed point of the loop.  The loop is fully
deterministic: identical inputs produce bitwise-identical traces.
"""

from __future__ import annotations

import io

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .ego import ego_to_global
from .energy import energy_and_gradient
from .geometry import quat_normalize
from .problem import EnergyCoefficients, OptimizerConfig, SceneProblem

TRACE_COLUMNS = ("iteration", "total", "e_2d", "e_traj", "e_reg", "e_cam", "e_pen")
CONVERGENCE_WINDOW = 20

# Below this infinity norm a gradient is float roundoff, not signal.
# Moment-normalized updates rescale any nonzero gradient toward
# learning-rate-sized steps, so stepping on noise would knock a
# converged state out of its optimum; freezing keeps it stationary.
GRAD_NOISE_FLOOR = 1e-9


def optimize(
    problem: SceneProblem,
    coeffs: EnergyCoefficients | None = None,
    config: OptimizerConfig | None = None,
):
    """Optimize all free parameters, returning the new problem and trace.

    The trace has one row per energy evaluation: the starting point plus
    each completed iteration, columns :data:`TRACE_COLUMNS`.  With a
    positive tolerance the loop stops once the relative change of the
    total over the trailing window drops below it.

    Raises:
        FloatingPointError: if the energy or gradient turns non-finite;
            the message carries the iteration it happened on.
    """
    coeffs = coeffs or EnergyCoefficients()
    config = config or OptimizerConfig()

    state = problem.state()
    x = state.to_vector()
    moment1 = np.zeros_like(x)
    moment2 = np.zeros_like(x)
    lr = config.learning_rate
    b1, b2 = config.beta1, config.beta2

    trace = np.empty((config.iterations + 1, len(TRACE_COLUMNS)))
    breakdown, grad = energy_and_gradient(problem, coeffs, state=state)
    _check_finite(breakdown.total, 0)
    trace[0] = (0.0, *breakdown.as_row())

    rows = 1
    for it in range(1, config.iterations + 1):
        g = grad.to_vector()
        finite = np.isfinite(g)
        if not finite.all():
            bad = int(np.nonzero(~finite)[0][0])
            raise FloatingPointError(
                f"non-finite gradient at parameter index {bad} on iteration {it}"
            )
        if np.abs(g).max() >= GRAD_NOISE_FLOOR:
            if config.grad_clip is not None:
                norm = float(np.linalg.norm(g))
                if norm > config.grad_clip:
                    g = g * (config.grad_clip / norm)

            moment1 = b1 * moment1 + (1.0 - b1) * g
            moment2 = b2 * moment2 + (1.0 - b2) * g * g
            m_hat = moment1 / (1.0 - b1**it)
            v_hat = moment2 / (1.0 - b2**it)
            x = x - lr * m_hat / (np.sqrt(v_hat) + config.epsilon)

            state = state.from_vector(x)
            state.cam_quat = quat_normalize(state.cam_quat)
            x = state.to_vector()

            breakdown, grad = energy_and_gradient(problem, coeffs, state=state)
            _check_finite(breakdown.total, it)
        trace[rows] = (float(it), *breakdown.as_row())
        rows += 1

        if config.tolerance > 0.0 and rows > CONVERGENCE_WINDOW:
            prev = trace[rows - 1 - CONVERGENCE_WINDOW, 1]
            rel = abs(trace[rows - 1, 1] - prev) / max(abs(prev), 1e-30)
            if rel < config.tolerance:
                break

    return problem.with_state(state), trace[:rows].copy()


def _check_finite(total: float, iteration: int):
    if not np.isfinite(total):
        raise FloatingPointError(
            f"non-finite energy ({total}) on iteration {iteration}"
        )


def trace_to_csv(trace: np.ndarray, file=None) -> str:
    """Serialize an energy trace as CSV with full float precision.

    Writes to ``file`` when given (path or file object); always returns
    the CSV text.  Output is byte-stable for identical traces.
    """
    trace = np.asarray(trace)
    buf = io.StringIO()
    buf.write(",".join(TRACE_COLUMNS) + "\n")
    for row in trace:
        cells = [str(int(row[0]))] + [repr(float(v)) for v in row[1:]]
        buf.write(",".join(cells) + "\n")
    text = buf.getvalue()
    if file is not None:
        if hasattr(file, "write"):
            file.write(text)
        else:
            with open(file, "w") as handle:
                handle.write(text)
    return text


class TrajectoryOptimizer(BaseEstimator):
    """Estimator-style wrapper around :func:`optimize`.

    ``fit`` consumes a :class:`SceneProblem` and exposes the optimized
    problem, the energy trace, and convergence bookkeeping as fitted
    attributes.  ``predict`` returns the reconstructed global
    trajectory of every person.

    Parameters mirror :class:`OptimizerConfig`; ``coeffs`` carries the
    energy term weights.
    """

    def __init__(
        self,
        coeffs: EnergyCoefficients | None = None,
        iterations: int = 500,
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        grad_clip: float | None = None,
        tolerance: float = 0.0,
    ):
        self.coeffs = coeffs
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.grad_clip = grad_clip
        self.tolerance = tolerance

    def _config(self) -> OptimizerConfig:
        return OptimizerConfig(
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            grad_clip=self.grad_clip,
            tolerance=self.tolerance,
        )

    def fit(self, X: SceneProblem, y=None):
        """Run the optimization loop on a scene problem."""
        if not isinstance(X, SceneProblem):
            raise TypeError(f"expected a SceneProblem, got {type(X).__name__}")
        self.problem_, self.trace_ = optimize(X, self.coeffs, self._config())
        self.n_iterations_ = int(self.trace_[-1, 0])
        self.energy_ = float(self.trace_[-1, 1])
        return self

    def predict(self, X=None):
        """Global trajectories of the optimized persons, in input order."""
        check_is_fitted(self, "problem_")
        return [ego_to_global(person.ego) for person in self.problem_.persons]
