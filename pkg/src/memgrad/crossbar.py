"""Differential-pair crossbar arrays: weight mapping, analog MAC, updates.

Each signed weight lives in a pair of devices, w = s * (G+ - G-), so a
reset-only technology can move weights in both directions: pulsing G- raises
w, pulsing G+ lowers it.  Matrices here use the (n_out, n_in) orientation of
the gradient equations: entry (i, j) couples input j to output i, and logits
are y = W @ x.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ParseError
from .device import (DeviceState, DeviceTechParams, ResetTrajectory,
                     apply_reset_pulse, reinitialize)

__all__ = [
    "Polarity",
    "OnExhaustion",
    "DifferentialPair",
    "UpdatePlan",
    "ReadModelParams",
    "ActionRecord",
    "PulseReport",
    "CrossbarArray",
    "ternarize",
    "save_snapshot_csv",
    "load_snapshot_csv",
]


class Polarity(enum.Enum):
    """Which device of a pair receives the reset pulse."""
    PULSE_PLUS = "pulse_plus"     # reset G+  -> weight decreases
    PULSE_MINUS = "pulse_minus"   # reset G-  -> weight increases


class OnExhaustion(enum.Enum):
    """Policy when a planned pulse hits an exhausted trajectory.

    SKIP leaves the device untouched (default during training: a mid-run
    reinit would re-randomize a learned weight).  REINIT draws a fresh
    trajectory and then applies the pulse (characterization runs).
    """
    SKIP = "skip"
    REINIT = "reinit"


@dataclass
class DifferentialPair:
    g_plus: DeviceState
    g_minus: DeviceState

    def __post_init__(self):
        if self.g_plus is self.g_minus:
            raise ValueError("a pair needs two distinct devices")


@dataclass
class UpdatePlan:
    """Set of single-pulse actions, at most one per (i, j) weight.

    Keys are (i, j) = (output row of the gradient matrix, input column).
    """

    actions: dict[tuple[int, int], Polarity] = field(default_factory=dict)

    def add(self, i: int, j: int, polarity: Polarity):
        if (i, j) in self.actions:
            raise ValueError(f"duplicate action for weight ({i}, {j})")
        self.actions[(i, j)] = polarity

    def __len__(self):
        return len(self.actions)

    def sorted_actions(self):
        return sorted(self.actions.items())


@dataclass
class ReadModelParams:
    """Read imperfections: relative multiplicative and additive current noise."""
    multiplicative_sigma: float = 0.01
    additive_sigma_a: float = 0.0
    enabled: bool = False

    def __post_init__(self):
        if self.multiplicative_sigma < 0 or self.additive_sigma_a < 0:
            raise ValueError("noise sigmas must be >= 0")


@dataclass
class ActionRecord:
    i: int
    j: int
    polarity: Polarity
    status: str              # "applied" | "skipped" | "reinit_then_applied"
    g_before: float          # conductance immediately before the pulse (S)
    g_after: float


@dataclass
class PulseReport:
    records: list[ActionRecord] = field(default_factory=list)

    @property
    def applied(self) -> int:
        return sum(r.status in ("applied", "reinit_then_applied") for r in self.records)

    @property
    def skipped(self) -> int:
        return sum(r.status == "skipped" for r in self.records)

    @property
    def reinits(self) -> int:
        return sum(r.status == "reinit_then_applied" for r in self.records)


class CrossbarArray:
    """A grid of differential pairs with read and program semantics.

    ``n_in`` is the number of word lines (inputs, the physical row count)
    and ``n_out`` the number of signed outputs (each one uses two physical
    columns).  The weight scale s = gain_kappa * v_read ties the software
    weight representation to the read gain.
    """

    def __init__(self, n_in: int, n_out: int, pairs, tech: DeviceTechParams,
                 gain_kappa: float = 5e4, bank=None, ledger=None):
        if len(pairs) != n_out or any(len(row) != n_in for row in pairs):
            raise ValueError("pairs grid must be n_out x n_in")
        self.n_in = n_in
        self.n_out = n_out
        self.pairs = pairs
        self.tech = tech
        self.gain_kappa = float(gain_kappa)
        self.bank = bank
        self.ledger = ledger
        self._g_plus = np.array([[p.g_plus.conductance for p in row] for row in pairs])
        self._g_minus = np.array([[p.g_minus.conductance for p in row] for row in pairs])
        # (n_out, n_in, 2): applied pulse counters, plus side 0 / minus side 1
        self.pulse_counts = np.zeros((n_out, n_in, 2), dtype=np.int64)

    # physical naming: rows are inputs, cols are outputs
    @property
    def rows(self) -> int:
        return self.n_in

    @property
    def cols(self) -> int:
        return self.n_out

    @property
    def scale_s(self) -> float:
        return self.gain_kappa * self.tech.v_read

    @property
    def device_count(self) -> int:
        return 2 * self.n_in * self.n_out

    @classmethod
    def build(cls, n_in: int, n_out: int, bank: list[ResetTrajectory],
              rng: np.random.Generator, tech: DeviceTechParams,
              gain_kappa: float = 5e4, pre_pulse_max: int = 50, ledger=None):
        """Assemble an array from fresh bank draws.

        Each device starts on a freshly drawn trajectory and receives a
        uniform random number of symmetry-breaking pre-pulses (0..max); these
        land the pair differences in a usable weight range and do not count
        as training pulses.
        """
        if not bank:
            raise ValueError("trajectory bank is empty")
        pairs = []
        for i in range(n_out):
            row = []
            for j in range(n_in):
                devs = []
                for _ in range(2):
                    traj = bank[int(rng.integers(0, len(bank)))]
                    pix = int(rng.integers(0, pre_pulse_max + 1)) if pre_pulse_max else 0
                    pix = min(pix, len(traj) - 1)
                    devs.append(DeviceState(traj, pulse_index=pix))
                row.append(DifferentialPair(g_plus=devs[0], g_minus=devs[1]))
            pairs.append(row)
        return cls(n_in, n_out, pairs, tech, gain_kappa, bank=bank, ledger=ledger)

    def conductances(self):
        """Current (G+, G-) matrices, shape (n_out, n_in) each."""
        return self._g_plus.copy(), self._g_minus.copy()

    def map_weights(self) -> np.ndarray:
        """W = s * (G+ - G-); pure read, (n_out, n_in)."""
        return self.scale_s * (self._g_plus - self._g_minus)

    def mac(self, x, read_model: ReadModelParams | None = None,
            rng: np.random.Generator | None = None) -> np.ndarray:
        """Analog multiply-accumulate for one input vector.

        Column currents I_i = sum_j (G+_ij - G-_ij) x_j V_read; logits are
        y_i = kappa * I_i, i.e. exactly W @ x for noiseless reads.  With a
        read model enabled, each column current picks up multiplicative and
        additive noise.  One read event is logged per call.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_in,):
            raise ValueError(f"input must have shape ({self.n_in},), got {x.shape}")
        currents = ((self._g_plus - self._g_minus) @ x) * self.tech.v_read
        if read_model is not None and read_model.enabled:
            if rng is None:
                raise ValueError("read noise enabled but no rng given")
            currents = currents * (1.0 + rng.normal(0.0, read_model.multiplicative_sigma,
                                                    self.n_out))
            if read_model.additive_sigma_a > 0:
                currents = currents + rng.normal(0.0, read_model.additive_sigma_a,
                                                 self.n_out)
        if self.ledger is not None:
            # driven conductance weighted by x^2 makes E = sum * V^2 * t exact
            g_sum = float(((self._g_plus + self._g_minus) @ (x ** 2)).sum())
            self.ledger.record_read(g_sum, self.tech.v_read, self.tech.t_read)
            self.ledger.record_macs(self.n_in * self.n_out)
        return self.gain_kappa * currents

    def apply_update_plan(self, plan: UpdatePlan,
                          policy: OnExhaustion = OnExhaustion.SKIP,
                          rng: np.random.Generator | None = None) -> PulseReport:
        """Apply one reset pulse per planned action.

        The pre-pulse conductance of every applied pulse is recorded (that is
        the G entering the pulse-energy formula).  Exhausted devices are
        skipped or reinitialized per policy; reinit draws need an rng.
        """
        report = PulseReport()
        for (i, j), polarity in plan.sorted_actions():
            if not (0 <= i < self.n_out and 0 <= j < self.n_in):
                raise ValueError(f"action ({i}, {j}) outside {self.n_out}x{self.n_in} grid")
            pair = self.pairs[i][j]
            device = pair.g_plus if polarity is Polarity.PULSE_PLUS else pair.g_minus
            status = "applied"
            if device.exhausted:
                if policy is OnExhaustion.SKIP:
                    report.records.append(ActionRecord(i, j, polarity, "skipped",
                                                       device.conductance,
                                                       device.conductance))
                    continue
                if rng is None:
                    raise ValueError("REINIT policy needs an rng")
                reinitialize(device, self.bank, rng, ledger=self.ledger)
                status = "reinit_then_applied"
            g_before = device.conductance
            g_after = apply_reset_pulse(device, self.tech.endurance_budget)
            side = 0 if polarity is Polarity.PULSE_PLUS else 1
            if side == 0:
                self._g_plus[i, j] = g_after
            else:
                self._g_minus[i, j] = g_after
            self.pulse_counts[i, j, side] += 1
            if self.ledger is not None:
                self.ledger.record_pulse(g_before, self.tech.name)
            report.records.append(ActionRecord(i, j, polarity, status, g_before, g_after))
        return report


def ternarize(x, dead_zone: float = 0.0) -> np.ndarray:
    """Map features to {-1, 0, +1}: sign outside the dead zone, else 0."""
    if dead_zone < 0:
        raise ValueError("dead_zone must be >= 0")
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) > dead_zone, np.sign(x), 0.0)


def save_snapshot_csv(array: CrossbarArray, path):
    """Persist the readable state of an array.

    One line per pair: row (input line), col (output column), conductances in
    microsiemens, and the replay cursors.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "col", "g_plus_uS", "g_minus_uS",
                    "pulse_index_plus", "pulse_index_minus"])
        for i in range(array.n_out):
            for j in range(array.n_in):
                pair = array.pairs[i][j]
                w.writerow([j, i,
                            f"{pair.g_plus.conductance * 1e6:.9g}",
                            f"{pair.g_minus.conductance * 1e6:.9g}",
                            pair.g_plus.pulse_index, pair.g_minus.pulse_index])


def load_snapshot_csv(path):
    """Read a snapshot back as conductance/index matrices.

    Returns a dict with g_plus, g_minus (S) and the two pulse-index arrays,
    all shaped (n_out, n_in).  Trajectories are not part of a snapshot, so
    this is a read-state restore (enough for aging and energy re-analysis),
    not a resumable training state.
    """
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = ["row", "col", "g_plus_uS", "g_minus_uS",
                    "pulse_index_plus", "pulse_index_minus"]
        if header != expected:
            raise ParseError(f"{path}: unexpected header {header}")
        for lineno, r in enumerate(reader, start=2):
            try:
                rows.append((int(r[0]), int(r[1]), float(r[2]), float(r[3]),
                             int(r[4]), int(r[5])))
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}:{lineno}: malformed row {r}") from exc
    if not rows:
        raise ParseError(f"{path}: empty snapshot")
    n_in = max(r[0] for r in rows) + 1
    n_out = max(r[1] for r in rows) + 1
    shape = (n_out, n_in)
    out = {"g_plus": np.zeros(shape), "g_minus": np.zeros(shape),
           "pulse_index_plus": np.zeros(shape, dtype=int),
           "pulse_index_minus": np.zeros(shape, dtype=int)}
    for j, i, gp, gm, pp, pm in rows:
        out["g_plus"][i, j] = gp * 1e-6
        out["g_minus"][i, j] = gm * 1e-6
        out["pulse_index_plus"][i, j] = pp
        out["pulse_index_minus"][i, j] = pm
    return out
