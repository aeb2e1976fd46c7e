"""Exception hierarchy shared by all modules."""


class WeakKamError(Exception):
    """Base class for all computational errors raised by this package."""


class ArgmaxOnBoundary(WeakKamError):
    """Fiberwise conjugation argmax landed on the fiber-box boundary."""


class ConvexityViolation(WeakKamError):
    """Sampled fiber Hessian failed the positive-definiteness check."""


class OutOfBox(WeakKamError):
    """A velocity or momentum left the declared fiber box."""


class EnergyDrift(WeakKamError):
    """Hamiltonian flow energy drifted beyond tolerance."""


class VanishingField(WeakKamError):
    """Characteristic field vanished on the optical level."""


class VelocityBoxExceeded(WeakKamError):
    """Stencil velocities R*h/tau exceed the fiber box half-width."""


class BracketFailure(WeakKamError):
    """Bisection bracket endpoints do not straddle the predicate flip."""


class NonConvergence(WeakKamError):
    """Fixed-point iteration failed to settle within the iteration cap."""


class CMismatch(WeakKamError):
    """Backward and forward critical-value estimates disagree."""


class DominationViolated(WeakKamError):
    """Input potential is not dominated at the stated critical value."""


class EmptyAubry(WeakKamError):
    """Barrier diagonal exceeds tolerance at every node."""


class DerivativeMismatch(WeakKamError):
    """Conjugate-pair differentials disagree on the Aubry set."""


class GraphViolation(WeakKamError):
    """Minimizing-measure support is not a graph over the base."""


class Infeasible(WeakKamError):
    """Linear program has no feasible point."""


class SolverFailure(WeakKamError):
    """Linear program solver failed for a reason other than infeasibility."""


class ResolutionTooCoarse(WeakKamError):
    """Selector value changed under fiber-grid refinement."""


class VerificationFailed(WeakKamError):
    """A verification claim with hard-failure semantics did not hold."""


class MeasureNotPreserved(WeakKamError):
    """Field is not divergence-free; invariant-integral identity unavailable."""


class ConfigError(WeakKamError):
    """Malformed or unknown configuration input."""


class GridTooSmall(WeakKamError):
    """Scan domain too small: the requested set touches its boundary."""


class NotRealizable(WeakKamError):
    """No smooth section below the requested energy level exists in the class."""


class DegenerateCritical(WeakKamError):
    """A degenerate fiberwise critical point, raised only in strict mode."""
