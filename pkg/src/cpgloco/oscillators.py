"""Per-limb amplitude-controlled phase oscillators and coupled open-loop gaits.

Each leg carries one oscillator with state (r, r_dot, theta, theta_dot,
phi, phi_dot).  The amplitude r relaxes to its setpoint mu through
critically damped second-order dynamics; theta is the stepping phase and
phi orients the step direction.  The learned controller drives the
oscillators with zero coupling; the coupled variant exists for fixed
open-loop gait baselines (trot, walk, pace).

All state arrays have a trailing axis of length 4 (leg order FL, FR, HL,
HR) and broadcast over arbitrary leading batch axes, so N independent
networks step in one call.
"""

from dataclasses import dataclass, field

import numpy as np

LEG_NAMES = ("FL", "FR", "HL", "HR")
FL, FR, HL, HR = 0, 1, 2, 3
NUM_LEGS = 4
TWO_PI = 2.0 * np.pi

MU_RANGE = (1.0, 2.0)
FREQ_RANGE = (0.0, 4.5)       # Hz
PSI_RANGE = (-1.5, 1.5)       # Hz
CONVERGENCE_FACTOR = 150.0    # 1/s

# Per-leg phase offsets (fraction of cycle * 2*pi) defining the classic gaits:
# trot pairs diagonals, pace pairs ipsilateral legs, walk staggers the
# footfalls FL -> HR -> FR -> HL by quarter cycles.
GAIT_PHASE_OFFSETS = {
    "trot": np.array([0.0, np.pi, np.pi, 0.0]),
    "pace": np.array([0.0, np.pi, 0.0, np.pi]),
    "walk": np.array([0.0, np.pi, 1.5 * np.pi, 0.5 * np.pi]),
}


class DynamicsDivergenceError(RuntimeError):
    """Raised when oscillator state stops being finite."""


@dataclass
class OscillatorState:
    """CPG network state, arrays shaped (..., 4)."""

    r: np.ndarray
    r_dot: np.ndarray
    theta: np.ndarray
    theta_dot: np.ndarray
    phi: np.ndarray
    phi_dot: np.ndarray

    @classmethod
    def initial(cls, batch_shape=(), r0=1.0, theta0=0.0, phi0=0.0):
        shape = tuple(batch_shape) + (NUM_LEGS,)
        return cls(
            r=np.full(shape, float(r0)),
            r_dot=np.zeros(shape),
            theta=np.broadcast_to(np.asarray(theta0, dtype=float), shape).copy() % TWO_PI,
            theta_dot=np.zeros(shape),
            phi=np.broadcast_to(np.asarray(phi0, dtype=float), shape).copy() % TWO_PI,
            phi_dot=np.zeros(shape),
        )

    def copy(self):
        return OscillatorState(
            self.r.copy(), self.r_dot.copy(), self.theta.copy(),
            self.theta_dot.copy(), self.phi.copy(), self.phi_dot.copy(),
        )

    def is_finite(self):
        return all(
            np.all(np.isfinite(a))
            for a in (self.r, self.r_dot, self.theta, self.theta_dot, self.phi, self.phi_dot)
        )


@dataclass
class CpgCommand:
    """Per-leg intrinsic setpoints, arrays shaped (..., 4)."""

    mu: np.ndarray     # amplitude setpoint, [1, 2]
    freq: np.ndarray   # stepping frequency, Hz, [0, 4.5]
    psi: np.ndarray    # direction frequency, Hz, [-1.5, 1.5]

    @classmethod
    def constant(cls, mu, freq, psi=0.0, batch_shape=()):
        shape = tuple(batch_shape) + (NUM_LEGS,)
        return cls(
            mu=np.full(shape, float(mu)),
            freq=np.full(shape, float(freq)),
            psi=np.full(shape, float(psi)),
        )

    def clipped(self):
        return CpgCommand(
            mu=np.clip(self.mu, *MU_RANGE),
            freq=np.clip(self.freq, *FREQ_RANGE),
            psi=np.clip(self.psi, *PSI_RANGE),
        )

    def within_limits(self, atol=0.0):
        return (
            np.all(self.mu >= MU_RANGE[0] - atol) and np.all(self.mu <= MU_RANGE[1] + atol)
            and np.all(self.freq >= FREQ_RANGE[0] - atol) and np.all(self.freq <= FREQ_RANGE[1] + atol)
            and np.all(self.psi >= PSI_RANGE[0] - atol) and np.all(self.psi <= PSI_RANGE[1] + atol)
        )


@dataclass
class CouplingConfig:
    """Inter-oscillator coupling: weights w_ij (1/s) and phase biases (rad).

    weights must have a zero diagonal and the bias matrix must be
    antisymmetric (bias[i, j] = -bias[j, i]); bias[i, j] is the locked
    value of theta_j - theta_i.
    """

    weights: np.ndarray = field(default_factory=lambda: np.zeros((NUM_LEGS, NUM_LEGS)))
    phase_biases: np.ndarray = field(default_factory=lambda: np.zeros((NUM_LEGS, NUM_LEGS)))
    convergence_factor: float = CONVERGENCE_FACTOR

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.phase_biases = np.asarray(self.phase_biases, dtype=float)
        if self.weights.shape != (NUM_LEGS, NUM_LEGS) or self.phase_biases.shape != (NUM_LEGS, NUM_LEGS):
            raise ValueError("coupling matrices must be 4x4")
        if np.any(self.weights < 0):
            raise ValueError("coupling weights must be non-negative")
        if np.any(np.diag(self.weights) != 0):
            raise ValueError("coupling weight diagonal must be zero")
        skew = self.phase_biases + self.phase_biases.T
        if not np.allclose(skew, 0.0, atol=1e-12):
            raise ValueError("phase biases must be antisymmetric")

    @classmethod
    def uncoupled(cls, a=CONVERGENCE_FACTOR):
        return cls(convergence_factor=a)

    @property
    def is_coupled(self):
        return bool(np.any(self.weights != 0))


def amplitude_propagator(a, dt):
    """Exact one-step propagator of the critically damped amplitude dynamics.

    The amplitude obeys r'' = a*(a/4*(mu - r) - r'), a linear system with a
    double pole at -a/2.  Its matrix exponential over dt is closed-form, so
    the 1 kHz step reproduces the continuous solution to round-off for
    piecewise-constant mu (first-order Euler at this dt leaves ~1e-5 errors,
    above the test oracle tolerance).
    """
    decay = np.exp(-0.5 * a * dt)
    return (
        decay * (1.0 + 0.5 * a * dt),   # e -> e
        decay * dt,                     # rdot -> e
        decay * (-0.25 * a * a * dt),   # e -> rdot
        decay * (1.0 - 0.5 * a * dt),   # rdot -> rdot
    )


def step_oscillators(state, cmd, coupling=None, dt=1e-3):
    """Advance the oscillator network by one step of length dt.

    Amplitudes use the exact critically damped propagator; phases integrate
    theta_dot = 2*pi*f (+ coupling term when coupled) and phi_dot = 2*pi*psi
    explicitly and wrap into [0, 2*pi).  Amplitudes clamp at 0 from below
    (r is a radius).  Returns a new state; the input is not modified.
    """
    if not (0.0 < dt <= 0.01):
        raise ValueError(f"dt must be in (0, 0.01], got {dt}")
    if not state.is_finite():
        raise DynamicsDivergenceError("non-finite oscillator state")
    if coupling is None:
        coupling = CouplingConfig.uncoupled()

    pee, pde, ped, pdd = amplitude_propagator(coupling.convergence_factor, dt)
    err = state.r - cmd.mu
    new_err = pee * err + pde * state.r_dot
    new_r_dot = ped * err + pdd * state.r_dot
    new_r = new_err + cmd.mu
    clamped = new_r < 0.0
    if np.any(clamped):
        new_r = np.where(clamped, 0.0, new_r)
        new_r_dot = np.where(clamped, np.maximum(new_r_dot, 0.0), new_r_dot)

    theta_dot = TWO_PI * cmd.freq
    if coupling.is_coupled:
        # coupling term for leg i: sum_j r_j * w_ij * sin(theta_j - theta_i - bias_ij)
        diff = state.theta[..., None, :] - state.theta[..., :, None] - coupling.phase_biases
        theta_dot = theta_dot + np.sum(state.r[..., None, :] * coupling.weights * np.sin(diff), axis=-1)
    phi_dot = TWO_PI * cmd.psi

    new_theta = state.theta + dt * theta_dot
    new_phi = state.phi + dt * phi_dot
    if coupling.is_coupled:
        new_theta = new_theta % TWO_PI
    else:
        # rates are bounded by the command limits, one wrap step suffices
        new_theta = np.where(new_theta >= TWO_PI, new_theta - TWO_PI, new_theta)
        new_theta = np.where(new_theta < 0.0, new_theta + TWO_PI, new_theta)
    new_phi = np.where(new_phi >= TWO_PI, new_phi - TWO_PI, new_phi)
    new_phi = np.where(new_phi < 0.0, new_phi + TWO_PI, new_phi)
    return OscillatorState(new_r, new_r_dot, new_theta, theta_dot, new_phi, phi_dot)


def open_loop_gait(name, f, mu, coupling_weight=1.0, a=CONVERGENCE_FACTOR):
    """Build a fixed open-loop gait: coupling, constant setpoints, initial state.

    The all-to-all coupling (uniform weight) with the gait's phase-bias
    pattern locks the network into the named footfall pattern at frequency f.
    """
    if name not in GAIT_PHASE_OFFSETS:
        raise ValueError(f"unknown gait {name!r}; expected one of {sorted(GAIT_PHASE_OFFSETS)}")
    if not (0.0 < f <= FREQ_RANGE[1]):
        raise ValueError(f"gait frequency must be in (0, {FREQ_RANGE[1]}], got {f}")
    if not (MU_RANGE[0] <= mu <= MU_RANGE[1]):
        raise ValueError(f"gait amplitude must be in {MU_RANGE}, got {mu}")

    offsets = GAIT_PHASE_OFFSETS[name]
    biases = offsets[None, :] - offsets[:, None]
    weights = coupling_weight * (1.0 - np.eye(NUM_LEGS))
    coupling = CouplingConfig(weights=weights, phase_biases=biases, convergence_factor=a)
    cmd = CpgCommand.constant(mu=mu, freq=f)
    state = OscillatorState.initial(r0=mu, theta0=offsets)
    return coupling, cmd, state


def phase_differences(theta):
    """Pairwise wrapped phase differences theta_j - theta_i, shaped (..., 4, 4)."""
    diff = theta[..., None, :] - theta[..., :, None]
    return (diff + np.pi) % TWO_PI - np.pi
