"""TV-regularized deblurring: operators, degradation and problem assembly.

The problem solved is

    min_{x in [0,1]^n}  ||A x - b||_1 + lam (TV_iso(x) + ||x||^2)

with A a Gaussian blur and TV_iso(x) = ||grad x||_x. It is split as
f = box indicator, h = lam ||.||^2, g_1 = ||. - b||_1 on the blur block and
g_2 = lam ||.||_x on the gradient block.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import ndimage

from ..config import DeblurConfig, ErrorRuleKind, GammaRule
from ..core.errors import ConfigError, DimensionMismatchError, ExactRecoveryError
from ..core.grids import GradientField, ImageGrid
from ..core.metric_algebra import MetricSchedule, Vec
from ..core.operators import (
    LinearMap,
    box01_prox,
    l1_conj_prox,
    prox_box01,
    quadratic_gradient,
    tv_dual_ball_prox,
)
from ..core.sequences import parse_sequence_rule
from ..solvers.fbf_solver import ErrorSchedule, SolverConfig
from ..solvers.primal_dual import (
    Block,
    PrimalDualProblem,
    ProductState,
    initial_state,
    lipschitz_aggregate,
)

logger = logging.getLogger(__name__)

GRADIENT_NORM_BOUND = math.sqrt(8.0)

# sum_{k>=1} e_k for each error rule
ERROR_SUMMABILITY: Dict[ErrorRuleKind, float] = {
    ErrorRuleKind.NONE: 0.0,
    ErrorRuleKind.INV_K2: math.pi ** 2 / 6.0,
    ErrorRuleKind.INV_K5: 1.0369277551433699,
    ErrorRuleKind.INV_KK: 1.2912859970626636,
    ErrorRuleKind.HALF_POW_K: 1.0,
}


# ---------------------------------------------------------------------------
# Gradient and total variation
# ---------------------------------------------------------------------------

def discrete_gradient(img: ImageGrid) -> GradientField:
    """Forward differences; the last row of p and last column of q are zero."""
    x = img.pixels
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    p[:-1, :] = x[1:, :] - x[:-1, :]
    q[:, :-1] = x[:, 1:] - x[:, :-1]
    return GradientField(p, q)


def gradient_adjoint(field: GradientField) -> ImageGrid:
    """Negative divergence matching ``discrete_gradient``."""
    p, q = field.p, field.q
    out = np.zeros(field.shape)
    out[:-1, :] -= p[:-1, :]
    out[1:, :] += p[:-1, :]
    out[:, :-1] -= q[:, :-1]
    out[:, 1:] += q[:, :-1]
    return ImageGrid(out)


def gradient_operator(shape: Tuple[int, int]) -> LinearMap:
    """The gradient on flattened images, into flattened fields (p then q)."""
    n = shape[0] * shape[1]

    def apply(x: Vec) -> Vec:
        return discrete_gradient(ImageGrid.from_flat(x, shape)).flatten()

    def adjoint(w: Vec) -> Vec:
        return gradient_adjoint(GradientField.from_flat(w, shape)).flatten()

    return LinearMap(apply, adjoint, n, 2 * n, GRADIENT_NORM_BOUND, "grad")


def tv_iso(img: ImageGrid) -> float:
    """Isotropic total variation with the one-sided terms on the last row and column."""
    x = img.pixels
    dv = x[1:, :-1] - x[:-1, :-1]
    dh = x[:-1, 1:] - x[:-1, :-1]
    interior = np.sum(np.sqrt(dv ** 2 + dh ** 2))
    last_col = np.sum(np.abs(x[1:, -1] - x[:-1, -1]))
    last_row = np.sum(np.abs(x[-1, 1:] - x[-1, :-1]))
    return float(interior + last_col + last_row)


# ---------------------------------------------------------------------------
# Blur
# ---------------------------------------------------------------------------

def gaussian_kernel(kernel_size: int, kernel_sigma: float) -> np.ndarray:
    """Truncated Gaussian kernel normalized to unit sum."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigError(f"kernel_size must be a positive odd integer, got {kernel_size}")
    if not kernel_sigma > 0:
        raise ConfigError(f"kernel_sigma must be positive, got {kernel_sigma}")
    ax = np.arange(kernel_size, dtype=np.float64) - kernel_size // 2
    g = np.exp(-(ax ** 2) / (2.0 * kernel_sigma ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def gaussian_blur(kernel_size: int, kernel_sigma: float, shape: Tuple[int, int]) -> LinearMap:
    """Correlation with the Gaussian kernel under half-sample symmetric extension.

    The kernel is symmetric, so the operator is self-adjoint. Its rows and
    columns sum to one, hence the norm bound 1.
    """
    if kernel_size // 2 > min(shape):
        raise ConfigError(
            f"kernel_size {kernel_size} is too large for a {shape[0]}x{shape[1]} image"
        )
    kernel = gaussian_kernel(kernel_size, kernel_sigma)

    def apply(x: Vec) -> Vec:
        if x.shape[0] != shape[0] * shape[1]:
            raise DimensionMismatchError(shape[0] * shape[1], x.shape[0], "image")
        return ndimage.correlate(x.reshape(shape), kernel, mode="reflect").reshape(-1)

    n = shape[0] * shape[1]
    return LinearMap(apply, apply, n, n, 1.0, f"blur{kernel_size}")


# ---------------------------------------------------------------------------
# Noise and quality
# ---------------------------------------------------------------------------

def box_muller_noise(shape: Tuple[int, int], sigma: float, seed: int) -> np.ndarray:
    """Gaussian noise from uniform pairs.

    Draws u = rng.random(2 * ceil(n / 2)) from ``numpy.random.default_rng(seed)``.
    Pair j uses u1 = 1 - u[2j] (in (0, 1]) and u2 = u[2j + 1]; it yields
    r cos(2 pi u2) at flat index 2j and r sin(2 pi u2) at 2j + 1, with
    r = sqrt(-2 ln u1). Values fill the image in row-major order.
    """
    n = shape[0] * shape[1]
    pairs = (n + 1) // 2
    rng = np.random.default_rng(seed)
    u = rng.random(2 * pairs)
    u1 = 1.0 - u[0::2]
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    normals = np.empty(2 * pairs)
    normals[0::2] = r * np.cos(2.0 * np.pi * u2)
    normals[1::2] = r * np.sin(2.0 * np.pi * u2)
    return sigma * normals[:n].reshape(shape)


def isnr(original: ImageGrid, observed: ImageGrid, current: ImageGrid) -> float:
    """10 log10(||x - b||^2 / ||x - x_n||^2) in decibels."""
    num = float(np.sum((original.pixels - observed.pixels) ** 2))
    den = float(np.sum((original.pixels - current.pixels) ** 2))
    if den == 0.0:
        raise ExactRecoveryError("current image equals the original; ISNR is unbounded")
    if num == 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def error_sequence(rule: ErrorRuleKind, k: int) -> float:
    """The k-th term (k >= 1) of a summable error sequence."""
    if k < 1:
        raise ConfigError(f"error sequences start at k=1, got k={k}")
    if rule is ErrorRuleKind.NONE:
        return 0.0
    if rule is ErrorRuleKind.INV_K2:
        return 1.0 / k ** 2
    if rule is ErrorRuleKind.INV_K5:
        return 1.0 / k ** 5
    if rule is ErrorRuleKind.INV_KK:
        return float(k) ** (-k)
    return 0.5 ** k


def error_schedule(rule: ErrorRuleKind) -> ErrorSchedule:
    """a_n = b_n = c_n = e_{n+1} in every coordinate."""
    if rule is ErrorRuleKind.NONE:
        return ErrorSchedule.none()
    return ErrorSchedule.from_sequence(
        lambda n: error_sequence(rule, n + 1), ERROR_SUMMABILITY[rule]
    )


# ---------------------------------------------------------------------------
# Objective and assembly
# ---------------------------------------------------------------------------

@dataclass
class DeblurObjective:
    """||A x - b||_1 + lam (TV_iso(x) + ||x||^2), +inf outside [0,1]^n."""
    blur: LinearMap
    observed: ImageGrid
    lam: float

    def __call__(self, x: Vec) -> float:
        if np.any(x < 0.0) or np.any(x > 1.0):
            return math.inf
        img = ImageGrid.from_flat(x, self.observed.shape)
        fidelity = float(np.sum(np.abs(self.blur.apply(x) - self.observed.flatten())))
        return fidelity + self.lam * (tv_iso(img) + float(np.dot(x, x)))


def objective_value(instance: "DeblurInstance", x: ImageGrid) -> float:
    return instance.objective(x.flatten())


@dataclass
class DeblurInstance:
    """An assembled deblurring problem and everything needed to run it."""
    problem: PrimalDualProblem
    original: ImageGrid
    observed: ImageGrid
    blur: LinearMap
    gradient: LinearMap
    cfg: DeblurConfig
    beta: float
    mu: float
    objective: DeblurObjective

    def __iter__(self):
        return iter((self.problem, self.observed))

    @property
    def shape(self):
        return self.original.shape

    def gamma(self) -> float:
        if self.cfg.gamma_rule is GammaRule.ERROR_FREE:
            return 1.0 / (2.0 * self.beta + 0.1)
        return 1.0 / (math.sqrt(10.0) * self.mu * (self.beta + 1.0))

    def solver_config(self, max_iters: int, **kwargs) -> SolverConfig:
        gamma = self.gamma()
        return SolverConfig.constant_gamma(
            gamma, max_iters, lambda_cap=gamma, errors=error_schedule(self.cfg.error_rule), **kwargs
        )

    def monitored_objective(self, p: Vec) -> float:
        """Objective at the box projection of p; error terms can push p out of the box."""
        return self.objective(prox_box01(p))

    def isnr_of(self, p: Vec) -> float:
        current = ImageGrid.from_flat(prox_box01(p), self.shape)
        try:
            return isnr(self.original, self.observed, current)
        except ExactRecoveryError:
            return math.inf

    def initial_state(self) -> ProductState:
        """Duals start at zero, previous resolvent outputs at the constant init_scalar."""
        c = self.cfg.init_scalar
        p1 = np.full(self.problem.dim, c)
        p2 = [np.full(block.dim, c) for block in self.problem.blocks]
        return initial_state(self.problem, p1.copy(), None, p1, p2)


def degrade(original: ImageGrid, cfg: DeblurConfig) -> Tuple[ImageGrid, LinearMap]:
    blur = gaussian_blur(cfg.kernel_size, cfg.kernel_sigma, original.shape)
    blurred = blur.apply(original.flatten()).reshape(original.shape)
    noise = box_muller_noise(original.shape, cfg.noise_sigma, cfg.noise_seed)
    return ImageGrid(np.clip(blurred + noise, 0.0, 1.0)), blur


def assemble_deblur(original: ImageGrid, cfg: DeblurConfig) -> DeblurInstance:
    """Blur, add seeded noise, clip, and build the two-block problem."""
    observed, blur = degrade(original, cfg)
    shape = original.shape
    n = original.size
    gradient = gradient_operator(shape)

    blocks = [
        Block(
            L=blur,
            r=np.zeros(n),
            g_conj_prox=l1_conj_prox(observed.flatten()),
            dual_metric_schedule=MetricSchedule.from_sequence(parse_sequence_rule(cfg.sigma1_rule), n),
            prox_rule=cfg.prox_rule,
            name="blur",
        ),
        Block(
            L=gradient,
            r=np.zeros(2 * n),
            g_conj_prox=tv_dual_ball_prox(cfg.lambda_reg, shape),
            dual_metric_schedule=MetricSchedule.from_sequence(parse_sequence_rule(cfg.sigma2_rule), 2 * n),
            prox_rule=cfg.prox_rule,
            name="tv",
        ),
    ]
    problem = PrimalDualProblem.minimization(
        f_prox=box01_prox(),
        grad_h=quadratic_gradient(cfg.lambda_reg),
        z=np.zeros(n),
        blocks=blocks,
        primal_metric_schedule=MetricSchedule.from_sequence(parse_sequence_rule(cfg.tau_rule), n),
        prox_rule=cfg.prox_rule,
        name=f"deblur{shape[0]}x{shape[1]}",
    )
    beta = lipschitz_aggregate(problem)
    mu = problem.mu
    logger.info("assembled %s: beta=%.6g mu=%.6g", problem.name, beta, mu)
    return DeblurInstance(
        problem=problem,
        original=original,
        observed=observed,
        blur=blur,
        gradient=gradient,
        cfg=cfg,
        beta=beta,
        mu=mu,
        objective=DeblurObjective(blur, observed, cfg.lambda_reg),
    )
