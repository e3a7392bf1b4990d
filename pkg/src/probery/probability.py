"""Placement probability math.

Records of one cell are spread over n blocks with a deliberately non-uniform
placement distribution: block a receives the probability mass of a normal
density over the interval [(a-1)*d, a*d) where d = lambda/n tiles [0, lambda]
exactly. Per-cell distributions are cyclic shifts of one another (the
diagonal offset), which keeps the aggregate load per block balanced while
giving each cell a few high-probability blocks and many low-probability
ones. The probability that a block holds at least one of a cell's omega
records then follows as 1-(1-p)^omega.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InvalidArgumentError

SIGMA_DEFAULT = 0.3989  # ~1/sqrt(2*pi); peak density ~1
# Smallest positive normal double: probabilities are floored here so that
# every block keeps a non-zero chance of receiving a record.
TINY_PROB = 2.2250738585072014e-308


@dataclass(frozen=True)
class PlacementConfig:
    """Parameters of the placement distribution and the physical grid.

    lambda_ is the domain upper bound (the density lives on [0, lambda_]),
    n the block count per slot, m the cell count, slots the number of
    independent identically-distributed block sets. Derived quantities:
    delta_x = lambda_/n is the per-block interval width and offset_step =
    n/m the per-cell cyclic shift.
    """

    lambda_: float = 4.0
    n: int = 4000
    m: int = 1000
    sigma: float = SIGMA_DEFAULT
    mu: float = field(default=-1.0)  # -1 sentinel: default to 0.5*lambda_
    slots: int = 1
    trunk_capacity: int = 1000

    def __post_init__(self):
        if self.lambda_ <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lambda_}")
        if self.lambda_ != int(self.lambda_):
            raise ConfigError("lambda must be integral so n %% lambda is checkable")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.mu == -1.0:
            object.__setattr__(self, "mu", 0.5 * self.lambda_)
        if self.n < self.lambda_:
            raise ConfigError(
                f"block count n={self.n} must be at least lambda={self.lambda_}"
            )
        if self.n % int(self.lambda_) != 0:
            raise ConfigError(f"n={self.n} must be a multiple of lambda={self.lambda_}")
        if self.m < 1:
            raise ConfigError(f"cell count m must be >= 1, got {self.m}")
        if self.n % self.m != 0:
            raise ConfigError(f"n={self.n} must be a multiple of m={self.m}")
        if self.slots < 1:
            raise ConfigError(f"slot count must be >= 1, got {self.slots}")
        if self.trunk_capacity < 1:
            raise ConfigError(f"trunk capacity must be >= 1, got {self.trunk_capacity}")

    @property
    def delta_x(self) -> float:
        """Width of one block interval on the density's domain."""
        return self.lambda_ / self.n

    @property
    def offset_step(self) -> int:
        """Cyclic shift between consecutive cells' block distributions."""
        return self.n // self.m

    @property
    def epsilon_tail(self) -> float:
        """Density mass falling outside [0, lambda]."""
        return 1.0 - (H_cdf(self.lambda_, self) - H_cdf(0.0, self))

    def with_mu(self, mu: float) -> "PlacementConfig":
        return replace(self, mu=mu)


def h_pdf(x: float, cfg: PlacementConfig) -> float:
    """Placement density: normal with mean mu and standard deviation sigma."""
    z = (x - cfg.mu) / cfg.sigma
    return math.exp(-0.5 * z * z) / (cfg.sigma * math.sqrt(2.0 * math.pi))


def H_cdf(x: float, cfg: PlacementConfig) -> float:
    """Cumulative distribution of h via the error function."""
    return 0.5 * (1.0 + math.erf((x - cfg.mu) / (cfg.sigma * math.sqrt(2.0))))


def block_pp(a: int, cfg: PlacementConfig) -> float:
    """Placement probability of block a (1-based): mass of its interval."""
    if not 1 <= a <= cfg.n:
        raise InvalidArgumentError(f"block index {a} out of [1, {cfg.n}]")
    d = cfg.delta_x
    return max(H_cdf(a * d, cfg) - H_cdf((a - 1) * d, cfg), TINY_PROB)


def offset_index(i: int, j: int, cfg: PlacementConfig) -> int:
    """Position of cell i's distribution that block j reads from (all 1-based)."""
    if not 1 <= i <= cfg.m:
        raise InvalidArgumentError(f"cell index {i} out of [1, {cfg.m}]")
    if not 1 <= j <= cfg.n:
        raise InvalidArgumentError(f"block index {j} out of [1, {cfg.n}]")
    return (j - 1 + (i - 1) * cfg.offset_step) % cfg.n + 1


def dpa_prob(i: int, j: int, cfg: PlacementConfig) -> float:
    """Placement probability of cell i's records landing in block j."""
    return block_pp(offset_index(i, j, cfg), cfg)


def block_for_cell(base_block, i, cfg: PlacementConfig):
    """Invert the offset: the block of cell i whose probability is f(base_block).

    Accepts scalars or numpy arrays for ``base_block``/``i``.
    """
    return (base_block - 1 - (i - 1) * cfg.offset_step) % cfg.n + 1


def existence_prob(p: float, omega: int) -> float:
    """Probability that omega independent placements at rate p hit a block.

    Evaluates 1-(1-p)^omega in the log domain so tiny p with large omega
    does not underflow.
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"probability {p} out of [0, 1]")
    if omega < 0:
        raise InvalidArgumentError(f"record count must be >= 0, got {omega}")
    if omega == 0 or p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    return -math.expm1(omega * math.log1p(-p))


def existence_prob_array(p: np.ndarray, omega: int) -> np.ndarray:
    """Vectorized existence_prob over an array of placement probabilities."""
    if omega < 0:
        raise InvalidArgumentError(f"record count must be >= 0, got {omega}")
    if omega == 0:
        return np.zeros_like(p)
    return -np.expm1(omega * np.log1p(-p))


@dataclass(frozen=True)
class ProbTable:
    """Precomputed per-block probabilities and their prefix sums.

    pp[a-1] = f(a); cum holds running sums; total = cum[-1] equals the
    density mass on [0, lambda] by telescoping. Immutable after build.
    """

    pp: np.ndarray
    cum: np.ndarray
    total: float

    def __post_init__(self):
        self.pp.setflags(write=False)
        self.cum.setflags(write=False)


def build_prob_table(cfg: PlacementConfig) -> ProbTable:
    """O(n) construction of the inverse-sampling lookup table."""
    pp = np.fromiter(
        (block_pp(a, cfg) for a in range(1, cfg.n + 1)), dtype=np.float64, count=cfg.n
    )
    cum = np.cumsum(pp)
    return ProbTable(pp=pp, cum=cum, total=float(cum[-1]))


def sample_block(table: ProbTable, u: float) -> int:
    """Smallest block a with cum[a-1] > u; P(a) = f(a)/total for uniform u."""
    if not 0.0 <= u < table.total:
        raise InvalidArgumentError(f"seed {u} out of [0, {table.total})")
    return int(np.searchsorted(table.cum, u, side="right")) + 1


def sample_blocks(table: ProbTable, u: np.ndarray) -> np.ndarray:
    """Vectorized sample_block; seeds are clipped just below total."""
    u = np.minimum(u, np.nextafter(table.total, 0.0))
    return np.searchsorted(table.cum, u, side="right") + 1
