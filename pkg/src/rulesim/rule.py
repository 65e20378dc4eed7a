"""Birth-time reward updating.

Each Ent carries a per-component ledger of accumulated rewards and an
inherited table of expected accumulated rewards per 20 s age bin. At
every birth the mother compares her ledger against the expectation for
her current age bin and nudges both the expectation and the matching
reward coefficient up or down by fixed increments, passing the updated
values to the offspring. Pain is deliberately excluded: it anchors the
scale of every other coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COMPONENTS = ("c1", "c2", "c3", "c4", "consumption", "reproduction")
N_COMPONENTS = len(COMPONENTS)
C1, C2, C3, C4, CONSUMPTION, REPRODUCTION = range(N_COMPONENTS)
BIN_SECONDS = 20.0

# Clamp ranges for the adjustable coefficients, in component order:
# currency rewards may go negative, consumption/reproduction may not.
THETA_LO = np.array([-1.0, -1.0, -1.0, -1.0, 0.0, 0.0])
THETA_HI = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0])

MODE_OFF = "off"
MODE_FULL = "full"
MODE_EXPECTATION_ONLY = "expectation_only"


def n_bins(max_age: float) -> int:
    return max(1, int(np.ceil(max_age / BIN_SECONDS)))


def age_bin(age: float, max_age: float) -> int:
    """20 s age bin, clamped to the last bin at the lifespan boundary."""
    return min(int(age // BIN_SECONDS), n_bins(max_age) - 1)


class ExpectationTable:
    """Expected accumulated reward per component per age bin."""

    __slots__ = ("values",)

    def __init__(self, values: np.ndarray):
        self.values = np.asarray(values, dtype=np.float64).copy()
        if self.values.ndim != 2 or self.values.shape[0] != N_COMPONENTS:
            raise ValueError(f"bad expectation table shape {self.values.shape}")

    @classmethod
    def zeros(cls, max_age: float) -> "ExpectationTable":
        return cls(np.zeros((N_COMPONENTS, n_bins(max_age))))

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "ExpectationTable":
        return ExpectationTable(self.values)

    def resized(self, bins: int) -> "ExpectationTable":
        """Copy adjusted to a different bin count (lifespan evolved).

        Extra bins repeat the last known expectation; surplus bins drop.
        """
        if bins == self.bins:
            return self.copy()
        out = np.zeros((N_COMPONENTS, bins))
        keep = min(bins, self.bins)
        out[:, :keep] = self.values[:, :keep]
        if bins > self.bins:
            out[:, self.bins:] = self.values[:, -1:]
        return ExpectationTable(out)


@dataclass
class RewardLedger:
    """Per-component rewards accumulated since birth (never reset)."""

    totals: np.ndarray = field(default_factory=lambda: np.zeros(N_COMPONENTS))

    def accumulate(self, rewards: np.ndarray) -> None:
        self.totals += rewards

    def copy(self) -> "RewardLedger":
        return RewardLedger(self.totals.copy())


def on_reproduction(theta: np.ndarray, ledger: RewardLedger,
                    table: ExpectationTable, age: float, max_age: float,
                    alpha: np.ndarray, beta: np.ndarray,
                    mode: str = MODE_FULL):
    """Apply the birth-time update; returns (theta', table').

    The returned arrays are what both the mother keeps and the offspring
    inherits (the offspring receives independent copies). ``mode``
    selects full updating, expectation-only updating (used while
    building baseline expectation tables), or a no-op passthrough.
    """
    new_theta = np.asarray(theta, dtype=np.float64).copy()
    new_table = table.copy()
    if mode == MODE_OFF:
        return new_theta, new_table
    tau = age_bin(age, max_age)
    delta = ledger.totals - new_table.values[:, tau]
    step = np.sign(delta)
    new_table.values[:, tau] += step * alpha
    if mode == MODE_FULL:
        new_theta = np.clip(new_theta + step * beta, THETA_LO, THETA_HI)
    return new_theta, new_table


def calibrate_alpha_beta(table: ExpectationTable, theta: np.ndarray,
                         n_generations: float = 25.0, c: float = 0.5,
                         beta_floor: float = 1e-4):
    """Derive update increments from stabilized expectation totals.

    alpha_i spreads the lifetime total over ``n_generations`` births;
    beta_i sits a factor ``c`` below the instability threshold
    T_i / n_i^2. Components with zero total or zero coefficient fall
    back to a floor so dormant rewards stay updatable.
    """
    totals = table.values.sum(axis=1)
    alpha = totals / n_generations
    beta = np.full(N_COMPONENTS, beta_floor)
    for i in range(N_COMPONENTS):
        if totals[i] > 0.0 and theta[i] != 0.0:
            n_i = totals[i] / theta[i]
            beta[i] = c * totals[i] / (n_i * n_i)
    alpha[totals <= 0.0] = 0.0
    return alpha, beta


def updates_unstable(table: ExpectationTable, theta: np.ndarray,
                     beta: np.ndarray) -> np.ndarray:
    """Flags components whose beta meets or exceeds the stability bound."""
    totals = table.values.sum(axis=1)
    flags = np.zeros(N_COMPONENTS, dtype=bool)
    for i in range(N_COMPONENTS):
        if totals[i] > 0.0 and theta[i] != 0.0:
            n_i = totals[i] / theta[i]
            flags[i] = beta[i] >= totals[i] / (n_i * n_i)
    return flags


class ConvergenceTracker:
    """Rolling-mean convergence test over per-birth expectation tables.

    Converged once the max-abs change of the rolling mean stays below
    ``tol`` for ``patience`` consecutive births.
    """

    def __init__(self, window: int = 100, tol: float = 1e-3,
                 patience: int = 100):
        self.window = window
        self.tol = tol
        self.patience = patience
        self._tables: list[np.ndarray] = []
        self._sum = None
        self._prev_mean = None
        self._quiet = 0
        self.converged = False

    def add(self, table: ExpectationTable) -> bool:
        v = table.values.copy()
        if self._sum is None:
            self._sum = np.zeros_like(v)
        self._tables.append(v)
        self._sum += v
        if len(self._tables) > self.window:
            self._sum -= self._tables.pop(0)
        if len(self._tables) == self.window:
            mean = self._sum / self.window
            if self._prev_mean is not None:
                change = float(np.max(np.abs(mean - self._prev_mean)))
                self._quiet = self._quiet + 1 if change < self.tol else 0
                if self._quiet >= self.patience:
                    self.converged = True
            self._prev_mean = mean
        return self.converged

    def rolling_mean(self):
        if self._prev_mean is None:
            return None
        return self._prev_mean.copy()
