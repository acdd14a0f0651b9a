"""Geometric algebra of three-dimensional Euclidean space (the Pauli algebra).

Multivectors store eight real coefficients in the fixed basis order

    1, e1, e2, e3, e1e2, e2e3, e3e1, i        (i = e1e2e3)

and may carry leading batch axes, so ``coeffs`` has shape ``(..., 8)``.
Complex numbers are never used inside the algebra: the pseudoscalar ``i``
plays the imaginary unit. The bivector slots relate to the dual vector
``b`` through ``i e1 = e2e3``, ``i e2 = e3e1`` and ``i e3 = e1e2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonSmoothField

BASIS_LABELS = ("1", "e1", "e2", "e3", "e12", "e23", "e31", "i")
GRADE_OF_SLOT = np.array([0, 1, 1, 1, 2, 2, 2, 3])
VECTOR_SLOTS = np.array([1, 2, 3])
# bivector slots ordered so that slot k holds the coefficient of i e_k
DUAL_SLOTS = np.array([5, 6, 4])

# PRODUCT_TABLE[a][b] = +/-(k+1) means basis[a] * basis[b] = +/- basis[k]
PRODUCT_TABLE = np.array(
    [
        [1, 2, 3, 4, 5, 6, 7, 8],
        [2, 1, 5, -7, 3, 8, -4, 6],
        [3, -5, 1, 6, -2, 4, 8, 7],
        [4, 7, -6, 1, 8, -3, 2, 5],
        [5, -3, 2, 8, -1, -7, 6, -4],
        [6, 8, -4, 3, 7, -1, -5, -2],
        [7, 4, 8, -2, -6, 5, -1, -3],
        [8, 6, 7, 5, -4, -2, -3, -1],
    ]
)


def _structure_tensor(table):
    out = np.zeros((8, 8, 8))
    for a in range(8):
        for b in range(8):
            entry = table[a, b]
            out[a, b, abs(entry) - 1] = np.sign(entry)
    return out


STRUCTURE = _structure_tensor(PRODUCT_TABLE)
_REVERSE_SIGNS = np.array([1.0, 1, 1, 1, -1, -1, -1, -1])
_SPATIAL_SIGNS = np.array([1.0, -1, -1, -1, 1, 1, 1, -1])

PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)


class Multivector:
    """Element (or batch of elements) of the Pauli algebra.

    Instances are immutable; the coefficient array is read-only.
    """

    __slots__ = ("coeffs",)
    __array_priority__ = 1000

    def __init__(self, coeffs):
        arr = np.array(coeffs, dtype=float)
        if arr.ndim == 0 or arr.shape[-1] != 8:
            raise ValueError(f"expected trailing axis of length 8, got shape {arr.shape}")
        arr.setflags(write=False)
        self.coeffs = arr

    # construction -------------------------------------------------------
    @classmethod
    def from_parts(cls, alpha=0.0, a=None, b=None, beta=0.0):
        """Build ``alpha + a + i b + i beta`` from scalar, vector, dual vector and pseudoscalar."""
        alpha = np.asarray(alpha, dtype=float)
        beta = np.asarray(beta, dtype=float)
        shapes = [alpha.shape, beta.shape]
        if a is not None:
            a = np.asarray(a, dtype=float)
            shapes.append(a.shape[:-1])
        if b is not None:
            b = np.asarray(b, dtype=float)
            shapes.append(b.shape[:-1])
        batch = np.broadcast_shapes(*shapes)
        out = np.zeros(batch + (8,))
        out[..., 0] = alpha
        out[..., 7] = beta
        if a is not None:
            out[..., VECTOR_SLOTS] = a
        if b is not None:
            out[..., DUAL_SLOTS] = b
        return cls(out)

    @classmethod
    def scalar(cls, value):
        return cls.from_parts(alpha=value)

    @classmethod
    def vector(cls, v):
        return cls.from_parts(a=v)

    @classmethod
    def basis(cls, label):
        out = np.zeros(8)
        out[BASIS_LABELS.index(label)] = 1.0
        return cls(out)

    @classmethod
    def complex_scalar(cls, re, im):
        """Scalar plus pseudoscalar: the algebra's version of ``re + 1j*im``."""
        return cls.from_parts(alpha=re, beta=im)

    @classmethod
    def from_matrix(cls, m):
        """Inverse of :meth:`to_matrix` for arrays of shape ``(..., 2, 2)``."""
        m = np.asarray(m, dtype=complex)
        half_trace = 0.5 * np.trace(m, axis1=-2, axis2=-1)
        comps = 0.5 * np.einsum("kij,...ji->...k", PAULI, m)
        return cls.from_parts(alpha=half_trace.real, a=comps.real, b=comps.imag, beta=half_trace.imag)

    # views --------------------------------------------------------------
    @property
    def shape(self):
        return self.coeffs.shape[:-1]

    @property
    def alpha(self):
        return self.coeffs[..., 0]

    @property
    def a(self):
        return self.coeffs[..., VECTOR_SLOTS]

    @property
    def b(self):
        return self.coeffs[..., DUAL_SLOTS]

    @property
    def beta(self):
        return self.coeffs[..., 7]

    def __getitem__(self, index):
        return Multivector._raw(self.coeffs[index])

    @classmethod
    def _raw(cls, coeffs):
        obj = Multivector.__new__(Multivector)
        arr = np.array(coeffs, dtype=float)
        arr.setflags(write=False)
        obj.coeffs = arr
        return obj

    def grade(self, k):
        mask = (GRADE_OF_SLOT == k).astype(float)
        return Multivector._raw(self.coeffs * mask)

    def even(self):
        return Multivector._raw(self.coeffs * (GRADE_OF_SLOT % 2 == 0))

    def odd(self):
        return Multivector._raw(self.coeffs * (GRADE_OF_SLOT % 2 == 1))

    # involutions ---------------------------------------------------------
    def reverse(self):
        return Multivector._raw(self.coeffs * _REVERSE_SIGNS)

    def spatial_inverse(self):
        return Multivector._raw(self.coeffs * _SPATIAL_SIGNS)

    # arithmetic ------------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Multivector):
            return other.coeffs
        value = np.asarray(other, dtype=float)
        out = np.zeros(value.shape + (8,))
        out[..., 0] = value
        return out

    def __add__(self, other):
        return Multivector._raw(self.coeffs + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Multivector._raw(self.coeffs - self._coerce(other))

    def __rsub__(self, other):
        return Multivector._raw(self._coerce(other) - self.coeffs)

    def __neg__(self):
        return Multivector._raw(-self.coeffs)

    def __mul__(self, other):
        if isinstance(other, Multivector):
            return geometric_product(self, other)
        value = np.asarray(other, dtype=float)
        return Multivector._raw(self.coeffs * value[..., None])

    def __rmul__(self, other):
        value = np.asarray(other, dtype=float)
        return Multivector._raw(self.coeffs * value[..., None])

    def __truediv__(self, other):
        value = np.asarray(other, dtype=float)
        return Multivector._raw(self.coeffs / value[..., None])

    def __eq__(self, other):
        if not isinstance(other, Multivector):
            return NotImplemented
        return self.coeffs.shape == other.coeffs.shape and bool(np.all(self.coeffs == other.coeffs))

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def isclose(self, other, tol=1e-12):
        """Max-coefficient comparison, broadcast over batches."""
        return bool(np.max(np.abs(self.coeffs - self._coerce(other)), initial=0.0) <= tol)

    def magnitude(self):
        """Euclidean norm of the coefficient vector, ``sqrt(<A A~>_0)`` for even elements."""
        return np.sqrt(np.sum(self.coeffs**2, axis=-1))

    def to_matrix(self):
        """Complex 2x2 representation with e_a -> sigma_a and i -> 1j."""
        c = self.coeffs
        scalar = c[..., 0] + 1j * c[..., 7]
        comps = c[..., VECTOR_SLOTS] + 1j * c[..., DUAL_SLOTS]
        eye = np.eye(2, dtype=complex)
        return scalar[..., None, None] * eye + np.einsum("...k,kij->...ij", comps, PAULI)

    def __str__(self):
        if self.coeffs.ndim > 1:
            return "[" + ", ".join(str(Multivector._raw(row)) for row in self.coeffs) + "]"
        parts = []
        for value, label in zip(self.coeffs, BASIS_LABELS):
            mag = repr(abs(float(value))) if value != 0 else "0.0"
            term = mag if label == "1" else f"{mag} {label}"
            if not parts:
                parts.append(("-" if value < 0 else "") + term)
            else:
                parts.append(("- " if value < 0 else "+ ") + term)
        return " ".join(parts)

    def __repr__(self):
        return f"Multivector({self})"


def geometric_product(a: Multivector, b: Multivector) -> Multivector:
    """Geometric product, broadcasting over batch axes."""
    return Multivector._raw(np.einsum("...i,...j,ijk->...k", a.coeffs, b.coeffs, STRUCTURE))


def involutions(a: Multivector):
    """Return ``(reverse, spatial_inverse)``."""
    return a.reverse(), a.spatial_inverse()


ONE = Multivector.basis("1")
E1 = Multivector.basis("e1")
E2 = Multivector.basis("e2")
E3 = Multivector.basis("e3")
I = Multivector.basis("i")
IDEMPOTENT = (ONE + E3) * 0.5
U_PLUS = (ONE + E3) * (1 / np.sqrt(2.0))
U_MINUS = E1 * U_PLUS


# rotors -------------------------------------------------------------------


class Rotor(Multivector):
    """Unit even multivector."""

    __slots__ = ()

    def __init__(self, coeffs, tol=1e-12):
        super().__init__(coeffs)
        c = self.coeffs
        if np.any(c[..., GRADE_OF_SLOT % 2 == 1] != 0):
            raise ValueError("rotor has odd-grade components")
        unit = np.sum(c**2, axis=-1)
        if np.max(np.abs(unit - 1.0), initial=0.0) > tol:
            raise ValueError("rotor is not unit")


@dataclass(frozen=True)
class EulerAngles:
    theta: float
    phi: float
    chi: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"theta={self.theta} outside [0, pi]")
        for name in ("phi", "chi"):
            value = getattr(self, name)
            if not -np.pi < value <= np.pi:
                raise ValueError(f"{name}={value} outside (-pi, pi]")


def rotation_rotor(axis, angle) -> Multivector:
    """``exp(-i n angle/2)`` for unit axis ``n`` (batched over leading axes)."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    return Multivector.from_parts(alpha=np.cos(half), b=-np.sin(half)[..., None] * axis)


def _axis(k):
    out = np.zeros(3)
    out[k] = 1.0
    return out


def rotor_from_angles(theta, phi, chi) -> Multivector:
    """Vectorised Euler rotor ``exp(-i e3 phi/2) exp(-i e2 theta/2) exp(-i e3 chi/2)``."""
    return (
        rotation_rotor(_axis(2), phi)
        * rotation_rotor(_axis(1), theta)
        * rotation_rotor(_axis(2), chi)
    )


def rotor_from_euler(angles: EulerAngles) -> Rotor:
    return Rotor(rotor_from_angles(angles.theta, angles.phi, angles.chi).coeffs)


def rotor_from_angles_expanded(theta, phi, chi) -> Multivector:
    """Expanded form ``e^{-i e3 (chi+phi)/2} cos(theta/2) - i e2 e^{-i e3 (chi-phi)/2} sin(theta/2)``."""
    theta = np.asarray(theta, dtype=float)
    first = rotation_rotor(_axis(2), np.asarray(chi) + phi) * np.cos(0.5 * theta)
    second = (I * E2) * rotation_rotor(_axis(2), np.asarray(chi) - phi) * np.sin(0.5 * theta)
    return first - second


def canonical_rotor(u: Multivector) -> Multivector:
    """Pick the representative of ``{u, -u}`` with non-negative scalar part.

    Ties are broken by making the first nonzero bivector coefficient positive.
    """
    c = u.coeffs
    sign = np.where(c[..., 0] > 0, 1.0, np.where(c[..., 0] < 0, -1.0, 0.0))
    biv = c[..., 4:7]
    nonzero = biv != 0
    first = np.argmax(nonzero, axis=-1)
    lead = np.take_along_axis(biv, first[..., None], axis=-1)[..., 0]
    tie_sign = np.where(lead < 0, -1.0, 1.0)
    sign = np.where(sign == 0, tie_sign, sign)
    return Multivector._raw(c * sign[..., None])


def _wrap(angle):
    """Wrap to (-pi, pi]."""
    out = np.mod(angle + np.pi, 2 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


POLE_EPS = 1e-9


def euler_from_rotor(u: Multivector, pole_eps: float = POLE_EPS) -> EulerAngles:
    """Euler angles of a rotor, defined up to the double cover.

    Near a pole (``sin theta < pole_eps``) only ``chi + phi`` or ``chi - phi``
    is meaningful; there ``phi`` is set to 0 and the freedom goes into ``chi``.
    """
    theta, phi, chi = angles_from_rotor(u, pole_eps)
    return EulerAngles(float(theta), float(phi), float(chi))


def angles_from_rotor(u: Multivector, pole_eps: float = POLE_EPS):
    amp_plus, amp_minus = spinor_amplitudes(u * U_PLUS)
    theta = 2.0 * np.arctan2(np.abs(amp_minus), np.abs(amp_plus))
    arg_p = np.angle(amp_plus)
    arg_m = np.angle(amp_minus)
    phi = _wrap(arg_m - arg_p)
    chi = _wrap(-(arg_p + arg_m))
    at_north = np.sin(theta) < pole_eps
    north = theta < 0.5 * np.pi
    phi = np.where(at_north, 0.0, phi)
    chi = np.where(at_north & north, _wrap(-2.0 * arg_p), chi)
    chi = np.where(at_north & ~north, _wrap(-2.0 * arg_m), chi)
    return theta, phi, chi


def spin_vector(u: Multivector) -> np.ndarray:
    """The rotated third axis ``U e3 U~`` as a plain 3-vector."""
    return (u * E3 * u.reverse()).a


@dataclass(frozen=True)
class SpinFrame:
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray

    def __post_init__(self):
        frame = np.stack([self.s1, self.s2, self.s3], axis=-2)
        gram = np.einsum("...ik,...jk->...ij", frame, frame)
        if np.max(np.abs(gram - np.eye(3)), initial=0.0) > 1e-12:
            raise ValueError("spin frame is not orthonormal")
        if np.max(np.abs(np.cross(self.s1, self.s2) - self.s3), initial=0.0) > 1e-12:
            raise ValueError("spin frame is not right-handed")


def spin_frame(u: Multivector) -> SpinFrame:
    ur = u.reverse()
    return SpinFrame(*(((u * Multivector.basis(lab)) * ur).a for lab in ("e1", "e2", "e3")))


# spinors ------------------------------------------------------------------


class Spinor(Multivector):
    """Element of the minimal left ideal generated by ``(1 + e3)/2``."""

    __slots__ = ()

    def __init__(self, coeffs, tol=1e-12):
        super().__init__(coeffs)
        absorbed = geometric_product(self, IDEMPOTENT).coeffs
        scale = max(1.0, float(np.max(np.abs(self.coeffs), initial=0.0)))
        if np.max(np.abs(absorbed - self.coeffs), initial=0.0) > tol * scale:
            raise ValueError("multivector is not in the left ideal of (1+e3)/2")


def spinor_from_amplitudes(psi_plus, psi_minus) -> Spinor:
    """``psi_plus u+ + psi_minus u-`` with each complex amplitude mapped to scalar + pseudoscalar."""
    psi_plus = np.asarray(psi_plus, dtype=complex)
    psi_minus = np.asarray(psi_minus, dtype=complex)
    up = Multivector.complex_scalar(psi_plus.real, psi_plus.imag) * U_PLUS
    down = Multivector.complex_scalar(psi_minus.real, psi_minus.imag) * U_MINUS
    return Spinor((up + down).coeffs)


def spinor_amplitudes(psi: Multivector):
    """Complex coefficients on ``u+`` and ``u-``: ``<u_A~ psi>_0 + <u_A~ psi>_3 / i``."""
    out = []
    for basis in (U_PLUS, U_MINUS):
        proj = basis.reverse() * psi
        out.append(proj.alpha + 1j * proj.beta)
    return out[0], out[1]


def rotor_from_spinor(psi: Multivector) -> Multivector:
    """Even element ``R`` with ``psi = R u+``; a rotor when ``psi`` is normalized."""
    return psi.even() * np.sqrt(2.0)


# angular derivatives ------------------------------------------------------

_FD_RESIDUAL_TOL = 0.05


def frame_derivatives(
    rotor_field: Callable[[np.ndarray], Multivector],
    point,
    h: float,
    smooth_tol: float = _FD_RESIDUAL_TOL,
) -> np.ndarray:
    """Angular-derivative vectors ``omega_a`` (rows a = 0, 1, 2) at ``point``.

    Uses ``Omega_a = -2 (d_a U) U~ = i omega_a`` with central differences.
    Raises NonSmoothField when ``(d_a U) U~`` has a non-bivector part larger
    than ``smooth_tol / h``, which signals a sign flip or kink between samples.
    """
    point = np.asarray(point, dtype=float)
    center = rotor_field(point)
    _check_unit(center)
    out = np.zeros((3, 3))
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        fwd = rotor_field(point + step)
        bwd = rotor_field(point - step)
        _check_unit(fwd)
        _check_unit(bwd)
        d_rotor = (fwd - bwd) / (2 * h)
        gen = d_rotor * center.reverse()
        stray = np.abs(np.delete(gen.coeffs, [4, 5, 6]))
        if h * np.max(stray) > smooth_tol:
            raise NonSmoothField(f"rotor field not smooth along axis {k} at {point}")
        big_omega = gen * -2.0
        out[k] = -(I * big_omega).a
    return out


def _check_unit(u: Multivector, tol=1e-8):
    unit = u * u.reverse()
    if abs(unit.alpha - 1.0) > tol or np.max(np.abs(unit.coeffs[1:])) > tol:
        raise NonSmoothField("sampled rotor is not unit")


def omega_dot_s(
    u_field: Callable[[np.ndarray], Multivector],
    point,
    h: float,
    tol: float | None = None,
) -> np.ndarray:
    """Per-axis ``<u~ i d_a u>_0`` for a normalized spinor field.

    The result is checked against ``omega_a . s / 2`` built from
    :func:`frame_derivatives`; disagreement beyond ``tol`` (default
    ``10 h^2``) raises NonSmoothField.
    """
    point = np.asarray(point, dtype=float)
    center = u_field(point)
    lhs = np.zeros(3)
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        d_u = (u_field(point + step) - u_field(point - step)) / (2 * h)
        lhs[k] = (center.reverse() * I * d_u).alpha

    def rotor_field(x):
        return rotor_from_spinor(u_field(x))

    omega = frame_derivatives(rotor_field, point, h)
    s = spin_vector(rotor_field(point))
    rhs = 0.5 * omega @ s
    limit = 10 * h * h if tol is None else tol
    if np.max(np.abs(lhs - rhs)) > limit:
        raise NonSmoothField(f"spinor identity mismatch {np.max(np.abs(lhs - rhs)):.3e} at {point}")
    return lhs
