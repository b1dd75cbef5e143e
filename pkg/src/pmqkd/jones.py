"""Jones calculus in the modulator-crystal frame.

Vectors are ``(a_o, a_e)``: complex amplitudes along the ordinary and the
extraordinary axis of the LiNbO3 crystal. The ordinary axis maps to Stokes
``s1 = +1``.

Handedness convention: ``s3 = 2 Im(conj(a_o) a_e)``, so ``(1, i)/sqrt(2)``
(extraordinary component leading by pi/2) sits at ``s3 = +1`` and is called
right circular here. Nothing downstream depends on the label.

Global phase is never observable; comparisons go through
:func:`canonical` or :func:`phase_distance`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CRYSTAL_FRAME = "crystal"

UNITARY_ATOL = 1e-12
NORM_ATOL = 1e-9


class FrameMismatchError(TypeError):
    """Operation mixed objects expressed in different reference frames."""


@dataclass(frozen=True)
class JonesVector:
    a_o: complex
    a_e: complex
    frame: str = CRYSTAL_FRAME

    @classmethod
    def from_array(cls, arr, frame: str = CRYSTAL_FRAME) -> JonesVector:
        arr = np.asarray(arr, dtype=complex).reshape(2)
        return cls(complex(arr[0]), complex(arr[1]), frame)

    @classmethod
    def from_amplitudes(cls, amp_o: float, amp_e: float, phase: float) -> JonesVector:
        """State with real amplitudes and relative phase ``arg(a_e) - arg(a_o)``."""
        return cls(complex(amp_o), amp_e * np.exp(1j * phase))

    def to_array(self) -> np.ndarray:
        return np.array([self.a_o, self.a_e], dtype=complex)

    @property
    def norm2(self) -> float:
        return abs(self.a_o) ** 2 + abs(self.a_e) ** 2

    @property
    def relative_phase(self) -> float:
        return float(np.angle(self.a_e) - np.angle(self.a_o))

    def is_normalized(self, atol: float = NORM_ATOL) -> bool:
        return abs(self.norm2 - 1.0) <= atol

    def normalized(self) -> JonesVector:
        n = math.sqrt(self.norm2)
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return JonesVector(self.a_o / n, self.a_e / n, self.frame)


@dataclass(frozen=True, eq=False)
class JonesMatrix:
    m: np.ndarray
    frame: str = CRYSTAL_FRAME

    def __post_init__(self):
        arr = np.array(self.m, dtype=complex)
        if arr.shape != (2, 2):
            raise ValueError(f"Jones matrix must be 2x2, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "m", arr)

    def __matmul__(self, other):
        if isinstance(other, JonesMatrix):
            return compose(self, other)
        if isinstance(other, JonesVector):
            return apply(self, other)
        return NotImplemented

    @property
    def dagger(self) -> JonesMatrix:
        return JonesMatrix(self.m.conj().T, self.frame)

    def unitarity_error(self) -> float:
        return float(np.linalg.norm(self.m.conj().T @ self.m - np.eye(2), ord="fro"))

    def is_unitary(self, atol: float = UNITARY_ATOL) -> bool:
        return self.unitarity_error() <= atol


@dataclass(frozen=True)
class StokesVector:
    s1: float
    s2: float
    s3: float

    def to_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3])

    def dot(self, other: StokesVector) -> float:
        return float(self.to_array() @ other.to_array())

    def angle_to(self, other: StokesVector) -> float:
        """Great-circle angle on the Poincare sphere (radians)."""
        a, b = self.to_array(), other.to_array()
        c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        return float(np.arccos(np.clip(c, -1.0, 1.0)))


IDENTITY = JonesMatrix(np.eye(2))


def _check_frames(a, b) -> None:
    if a.frame != b.frame:
        raise FrameMismatchError(f"frame {a.frame!r} does not match {b.frame!r}")


def compose(m1: JonesMatrix, m2: JonesMatrix) -> JonesMatrix:
    """Return the element that applies ``m2`` first, then ``m1``."""
    _check_frames(m1, m2)
    return JonesMatrix(m1.m @ m2.m, m1.frame)


def chain(*elements: JonesMatrix) -> JonesMatrix:
    """Compose elements listed in propagation order (first element acts first)."""
    out = IDENTITY if not elements else JonesMatrix(np.eye(2), elements[0].frame)
    for el in elements:
        out = compose(el, out)
    return out


def apply(m: JonesMatrix, v: JonesVector) -> JonesVector:
    _check_frames(m, v)
    return JonesVector.from_array(m.m @ v.to_array(), m.frame)


def phase_modulator_matrix(delta_phi: float, phi_or: float = 0.0, phi_ex: float = 0.0) -> JonesMatrix:
    """LiNbO3 phase modulator: the voltage-induced shift acts on the extraordinary axis only."""
    return JonesMatrix(np.diag([np.exp(1j * phi_or), np.exp(1j * (phi_ex + delta_phi))]))


def overlap(u: JonesVector, v: JonesVector) -> float:
    """Transition probability ``|<u|v>|^2`` between two normalized states."""
    _check_frames(u, v)
    if not (u.is_normalized() and v.is_normalized()):
        raise ValueError("overlap requires normalized Jones vectors")
    inner = np.vdot(u.to_array(), v.to_array())
    return float(min(1.0, abs(inner) ** 2))


def to_stokes(v: JonesVector) -> StokesVector:
    n2 = v.norm2
    if n2 == 0.0:
        raise ValueError("zero vector has no Stokes representation")
    cross = np.conj(v.a_o) * v.a_e
    return StokesVector(
        (abs(v.a_o) ** 2 - abs(v.a_e) ** 2) / n2,
        2.0 * cross.real / n2,
        2.0 * cross.imag / n2,
    )


def canonical(v: JonesVector) -> JonesVector:
    """Remove the global phase: ``a_o`` real non-negative, or ``a_e`` real positive if ``a_o == 0``."""
    ref = v.a_o if abs(v.a_o) > 0.0 else v.a_e
    if ref == 0:
        return v
    rot = abs(ref) / ref
    return JonesVector(v.a_o * rot, v.a_e * rot, v.frame)


def phase_distance(a: JonesMatrix, b: JonesMatrix) -> float:
    """Frobenius distance between ``a`` and ``b`` minimized over a global phase on ``b``."""
    _check_frames(a, b)
    cross = np.trace(b.m.conj().T @ a.m)
    rot = cross / abs(cross) if abs(cross) > 0.0 else 1.0
    return float(np.linalg.norm(a.m - rot * b.m))


def off_diagonal_residual(m: JonesMatrix) -> float:
    """Largest off-diagonal magnitude, the measure for 'identity up to global phase'."""
    return float(max(abs(m.m[0, 1]), abs(m.m[1, 0])))


def diagonal_phase_mismatch(m: JonesMatrix) -> float:
    """Absolute relative phase between the diagonal entries (0 when ``m`` is a multiple of I)."""
    return float(abs(np.angle(m.m[1, 1] * np.conj(m.m[0, 0]))))


# --- section matrices of the link ------------------------------------------
#
# Unitary forms of the three section transforms. With P(x) = diag(1, e^{ix}),
# H the Hadamard matrix and X the component swap:
#   launch   = P(phi1) H      maps (1, 0) to (1, e^{i phi1})/sqrt(2)
#   swap     = X P(phi2)      exchanges the axes, extra phase phi2
#   analysis = H P(phi3) X
# so analysis @ swap @ launch = H P(phi1 + phi2 + phi3) H, a multiple of I
# exactly when the phase sum is a multiple of 2 pi.

_H = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / math.sqrt(2.0)
_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def _p(x: float) -> np.ndarray:
    return np.diag([1.0, np.exp(1j * x)])


def launch_section(phi1: float) -> JonesMatrix:
    """Laser -> Alice's modulator: equal amplitudes on both crystal axes."""
    return JonesMatrix(_p(phi1) @ _H)


def swap_section(phi2: float) -> JonesMatrix:
    """Alice's modulator -> Bob's modulator: ordinary and extraordinary components change places."""
    return JonesMatrix(_X @ _p(phi2))


def analysis_section(phi3: float) -> JonesMatrix:
    """Bob's modulator -> PBS."""
    return JonesMatrix(_H @ _p(phi3) @ _X)


HADAMARD = JonesMatrix(_H)
SWAP = JonesMatrix(_X)


def bb84_state(phi1: float, alice_phase: float) -> JonesVector:
    """Output of Alice's modulator for launch phase ``phi1`` and applied shift ``alice_phase``."""
    return JonesVector(1.0 / math.sqrt(2.0), np.exp(1j * (phi1 + alice_phase)) / math.sqrt(2.0))


def su2_rotation(axis, angle: float) -> np.ndarray:
    """SU(2) matrix rotating Stokes vectors by ``angle`` about the unit ``axis`` (s1, s2, s3)."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    # sigma matrices ordered to match to_stokes: s1 ~ Z, s2 ~ X, s3 ~ Y
    gen = n[0] * np.array([[1, 0], [0, -1]]) + n[1] * np.array([[0, 1], [1, 0]]) + n[2] * np.array([[0, -1j], [1j, 0]])
    return math.cos(angle / 2.0) * np.eye(2) - 1j * math.sin(angle / 2.0) * gen


def reunitarize(m: np.ndarray) -> np.ndarray:
    """Nearest unitary matrix (polar factor)."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh
