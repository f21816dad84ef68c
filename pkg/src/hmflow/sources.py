"""Source manifolds with a time-dependent metric.

Two closed-form families are built in: the circle and the 2-sphere, each
with a prescribed time-varying radius.  Both expose the same surface: a
chart grid, the time-dependent isometric embedding, tangent projection
fields, intrinsic gradient/Laplacian on grid fields, quadrature weights,
one-step conditional-expectation kernels for the backward dynamics, and
the path integrator step for the forward diffusion.

Grid fields are numpy arrays of shape ``grid_shape + value_shape``:
``(n,)``-leading for the circle, ``(n_theta, n_phi)``-leading for the
sphere, with an optional trailing value axis for vector-valued maps.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import GridTooCoarse, TimeOutOfRange

_TIME_SLACK = 1e-12


class RadiusProfile:
    """Smooth positive radius as a function of time, with derivative."""

    def __init__(self, value_fn, deriv_fn, label: str):
        self._value = value_fn
        self._deriv = deriv_fn
        self.label = label

    def __call__(self, t):
        return self._value(np.asarray(t, dtype=float))

    def derivative(self, t):
        return self._deriv(np.asarray(t, dtype=float))

    def __repr__(self):
        return f"RadiusProfile({self.label})"


def constant_radius(r: float = 1.0) -> RadiusProfile:
    r = float(r)
    return RadiusProfile(lambda t: np.full_like(t, r, dtype=float),
                         lambda t: np.zeros_like(t, dtype=float),
                         f"constant {r:g}")


def sine_radius(a: float = 0.2, b: float = 1.0) -> RadiusProfile:
    """rho(t) = 1 + a sin(b t)."""
    a, b = float(a), float(b)
    return RadiusProfile(lambda t: 1.0 + a * np.sin(b * t),
                         lambda t: a * b * np.cos(b * t),
                         f"1 + {a:g} sin({b:g} t)")


def shrinking_radius() -> RadiusProfile:
    """rho(t) = sqrt(1 - 2t): the round shrinking solution for the 2-sphere."""
    return RadiusProfile(lambda t: np.sqrt(np.maximum(1.0 - 2.0 * t, 0.0)),
                         lambda t: -1.0 / np.sqrt(np.maximum(1.0 - 2.0 * t, 1e-300)),
                         "sqrt(1 - 2t)")


class SourceManifold:
    """Shared behaviour of the closed-form source families."""

    dim: int
    ambient_dim: int

    def __init__(self, profile: RadiusProfile, horizon: float):
        self.profile = profile
        self.horizon = float(horizon)
        tgrid = np.linspace(0.0, self.horizon, 2001)
        rho = profile(tgrid)
        if np.min(rho) <= 0.0 or not np.all(np.isfinite(profile.derivative(tgrid))):
            raise ValueError("radius profile must stay positive with bounded "
                             "derivative on [0, horizon]")

    def _check_time(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -_TIME_SLACK) or np.any(t > self.horizon + _TIME_SLACK):
            raise TimeOutOfRange(
                f"t={t!r} outside metric definition interval [0, {self.horizon}]")

    def min_radius(self, t0: float, t1: float) -> float:
        tgrid = np.linspace(t0, t1, 1001)
        return float(np.min(self.profile(tgrid)))

    def ricci_bound(self, n_time: int = 1001) -> float:
        """Supremum over the time grid of the metric-compatibility tensor norm.

        The tensor d(g_t)/dt + Ric_{g_t} is conformal for both families, so its
        g x g norm reduces to |scalar| * sqrt(dim); the sup is taken over at
        least 1000 time nodes.
        """
        n_time = max(int(n_time), 1001)
        tgrid = np.linspace(0.0, self.horizon, n_time)
        return float(np.max(np.abs(self._compat_scalar(tgrid))) * np.sqrt(self.dim))


class Circle(SourceManifold):
    """Circle of radius rho(t), chart angle theta in [0, 2 pi).

    Chart fields use spectral (Fourier) differentiation, so smooth fields
    are differentiated to near machine precision and the one-step
    conditional expectation of the backward dynamics is the exact periodic
    heat kernel.
    """

    dim = 1
    ambient_dim = 2

    def __init__(self, profile: RadiusProfile | None = None, n_theta: int = 256,
                 horizon: float = 1.0):
        super().__init__(profile or constant_radius(1.0), horizon)
        self.n_theta = int(n_theta)
        self.thetas = 2.0 * np.pi * np.arange(self.n_theta) / self.n_theta
        # integer wavenumbers of rfft; Nyquist first-derivative zeroed
        self._k = np.fft.rfftfreq(self.n_theta, d=1.0 / self.n_theta)
        self._k_d1 = self._k.copy()
        if self.n_theta % 2 == 0:
            self._k_d1[-1] = 0.0

    def __repr__(self):
        return f"Circle(rho={self.profile.label!r}, n_theta={self.n_theta})"

    # -- grid -------------------------------------------------------------

    @property
    def grid_shape(self):
        return (self.n_theta,)

    @property
    def n_nodes(self):
        return self.n_theta

    def grid_points(self):
        return self.thetas

    def _require_grid(self, field):
        if field.shape[0] != self.n_theta:
            raise GridTooCoarse(f"field has {field.shape[0]} nodes, grid has {self.n_theta}")
        if self.n_theta < 8:
            raise GridTooCoarse("need at least 8 circle nodes")

    # -- embedding and projection fields -----------------------------------

    def embed(self, t, x):
        """Embedded position rho(t) (cos theta, sin theta)."""
        self._check_time(t)
        theta = np.asarray(x, dtype=float)
        rho = self.profile(t)
        return np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=-1)

    def unit_tangent(self, x):
        theta = np.asarray(x, dtype=float)
        return np.stack([-np.sin(theta), np.cos(theta)], axis=-1)

    def projection_fields(self, t, x):
        """Orthogonal projector onto the embedded tangent line, (..., 2, 2).

        Column i is the projection of the ambient basis vector e_i; the
        matrix equals tau tau^T for the unit tangent tau and is independent
        of the radius.
        """
        self._check_time(t)
        tau = self.unit_tangent(x)
        return tau[..., :, None] * tau[..., None, :]

    # -- spectral calculus ---------------------------------------------------

    def _dtheta(self, field):
        modes = np.fft.rfft(field, axis=0)
        shape = (-1,) + (1,) * (field.ndim - 1)
        return np.fft.irfft(modes * (1j * self._k_d1.reshape(shape)), n=self.n_theta, axis=0)

    def frame_gradient(self, t, field):
        """Intrinsic gradient in the orthonormal tangent frame.

        Output shape inserts a frame axis after the grid axis:
        (n, 1) for scalar fields, (n, 1, value_dim) for vector fields; the
        Euclidean norm over trailing axes is the g_t-norm of the gradient.
        """
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        rho = float(self.profile(t))
        return (self._dtheta(field) / rho)[:, None, ...]

    def gradient_gnorm(self, t, field):
        z = self.frame_gradient(t, field)
        axes = tuple(range(1, z.ndim))
        return np.sqrt(np.sum(z * z, axis=axes))

    def laplace_beltrami(self, t, field):
        """(1/rho^2) d^2/dtheta^2 via the Fourier multiplier -k^2/rho^2."""
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        rho = float(self.profile(t))
        modes = np.fft.rfft(field, axis=0)
        shape = (-1,) + (1,) * (field.ndim - 1)
        mult = -(self._k ** 2).reshape(shape) / rho ** 2
        return np.fft.irfft(modes * mult, n=self.n_theta, axis=0)

    def generator_residual(self, t, field):
        """Pointwise defect of the sum-of-squares identity for the projection fields.

        Composes directional derivatives of the radial ambient extension
        along each projection field and subtracts the Laplace-Beltrami
        value; for smooth fields the residual is spectrally small.
        """
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        rho = float(self.profile(t))
        comp = np.stack([-np.sin(self.thetas), np.cos(self.thetas)], axis=0)
        df = self._dtheta(field) / rho
        total = np.zeros_like(field)
        for i in range(2):
            ci = comp[i].reshape((-1,) + (1,) * (field.ndim - 1))
            total += ci * (self._dtheta(ci * df) / rho)
        return total - self.laplace_beltrami(t, field)

    def volume_weights(self, t):
        self._check_time(t)
        rho = float(self.profile(t))
        return np.full(self.n_theta, 2.0 * np.pi * rho / self.n_theta)

    def volume_weights_dt(self, t):
        """Time derivative of the quadrature weights, from the closed-form rho'."""
        self._check_time(t)
        drho = float(self.profile.derivative(t))
        return np.full(self.n_theta, 2.0 * np.pi * drho / self.n_theta)

    def _compat_scalar(self, tgrid):
        # circle: Ric = 0, d(g)/dt = (2 rho'/rho) g
        return 2.0 * self.profile.derivative(tgrid) / self.profile(tgrid)

    # -- interpolation ---------------------------------------------------------

    def interpolate_slice(self, field, x):
        """Trigonometric interpolation of a grid field at angles x."""
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        theta = np.atleast_1d(np.asarray(x, dtype=float))
        modes = np.fft.rfft(field, axis=0)
        weights = np.full(len(self._k), 2.0 / self.n_theta)
        weights[0] = 1.0 / self.n_theta
        if self.n_theta % 2 == 0:
            weights[-1] = 1.0 / self.n_theta
        basis = np.exp(1j * np.outer(theta, self._k))
        flat = modes.reshape(len(self._k), -1)
        vals = np.real(basis @ (weights[:, None] * flat))
        out = vals.reshape(theta.shape + field.shape[1:])
        if np.isscalar(x) or np.ndim(x) == 0:
            return out[0]
        return out

    def _upsampled(self, field, n_fine):
        """Band-limited upsample of a slice onto n_fine uniform nodes."""
        modes = np.fft.rfft(field, axis=0)
        padded = np.zeros((n_fine // 2 + 1,) + field.shape[1:], dtype=complex)
        padded[: modes.shape[0]] = modes
        if self.n_theta % 2 == 0:
            padded[modes.shape[0] - 1] *= 0.5  # split Nyquist when padding
        return np.fft.irfft(padded, n=n_fine, axis=0) * (n_fine / self.n_theta)

    def fast_periodic_eval(self, field, x, n_fine: int = 4096):
        """Linear interpolation on a band-limited upsample; cheap for many queries.

        The fine grid is uniform, so lookup is direct indexing, no search.
        """
        field = np.asarray(field, dtype=float)
        n_fine = max(n_fine, 4 * self.n_theta)
        fine = self._upsampled(field, n_fine)
        theta = np.mod(np.asarray(x, dtype=float), 2.0 * np.pi)
        pos = theta * (n_fine / (2.0 * np.pi))
        i0 = np.minimum(pos.astype(np.intp), n_fine - 1)
        frac = pos - i0
        i1 = (i0 + 1) % n_fine
        if field.ndim > 1:
            frac = frac.reshape(frac.shape + (1,) * (field.ndim - 1))
        return fine[i0] * (1.0 - frac) + fine[i1] * frac

    # -- one-step conditional expectations ---------------------------------------

    def heat_semigroup_step(self, t, dt, field):
        """Exact periodic heat kernel over one step with diffusivity rho(t)^-2 / 2."""
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        rho = float(self.profile(t))
        modes = np.fft.rfft(field, axis=0)
        shape = (-1,) + (1,) * (field.ndim - 1)
        decay = np.exp(-0.5 * (self._k ** 2).reshape(shape) * dt / rho ** 2)
        return np.fft.irfft(modes * decay, n=self.n_theta, axis=0)

    def mc_step_mean(self, t, dt, field, n_paths: int, rng: np.random.Generator,
                     antithetic: bool = False):
        """One-step Monte Carlo conditional expectation at every grid node.

        The node batch shares one increment sample per slice, so the
        estimator mean_j w(theta + delta_j) is a circular convolution with
        the empirical increment distribution.  It is evaluated exactly by
        multiplying the field's Fourier modes with the sample's empirical
        characteristic function: unbiased per node, no interpolation error,
        O(n_modes * n_paths) per slice.
        """
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        rho = float(self.profile(t))
        if antithetic:
            half = rng.standard_normal(n_paths // 2)
            delta = np.concatenate([half, -half])
        else:
            delta = rng.standard_normal(n_paths)
        delta = delta * (np.sqrt(dt) / rho)
        base = np.exp(1j * delta)
        chi = np.empty(len(self._k), dtype=complex)
        cur = np.ones_like(base)
        for k in range(len(self._k)):
            chi[k] = cur.mean()
            cur *= base
        modes = np.fft.rfft(field, axis=0)
        shape = (-1,) + (1,) * (field.ndim - 1)
        return np.fft.irfft(modes * chi.reshape(shape), n=self.n_theta, axis=0)

    def quadrature_step_mean(self, t, dt, field, n_quad: int = 40):
        """Gauss-Hermite evaluation of the one-step conditional expectation."""
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        rho = float(self.profile(t))
        nodes, weights = np.polynomial.hermite.hermgauss(n_quad)
        shifts = np.sqrt(2.0 * dt) / rho * nodes
        acc = np.zeros_like(field)
        for w, s in zip(weights / np.sqrt(np.pi), shifts):
            acc += w * self.interpolate_slice(field, np.mod(self.thetas + s, 2 * np.pi))
        return acc

    # -- forward path step ------------------------------------------------------

    def step_paths(self, states, t, dt, dW):
        """Advance path angles by one step driven by ambient increments dW (n, 2).

        The scalar increment -sin(theta) dW1 + cos(theta) dW2 is conditionally
        N(0, dt), making the chart update exact in law for the generator
        rho^-2 d^2/dtheta^2 / 2.  Returns (new_states, constraint_violation).
        """
        rho = float(self.profile(t))
        db = -np.sin(states) * dW[..., 0] + np.cos(states) * dW[..., 1]
        return states + db / rho, 0.0

    def scalar_increments(self, states, dW):
        """Chart-driving scalar increments implied by ambient increments along paths."""
        return -np.sin(states) * dW[..., 0] + np.cos(states) * dW[..., 1]


class Sphere2(SourceManifold):
    """Round 2-sphere of radius rho(t); chart points are unit 3-vectors.

    Fields live on a latitude-longitude grid with cell-centered colatitudes
    (no node sits on a pole).  Longitude derivatives are spectral; colatitude
    derivatives use 4th-order differences with the exact cross-pole
    continuation f(-theta, phi) = f(theta, phi + pi).
    """

    dim = 2
    ambient_dim = 3

    def __init__(self, profile: RadiusProfile | None = None, n_theta: int = 64,
                 n_phi: int = 128, horizon: float = 1.0):
        super().__init__(profile or constant_radius(1.0), horizon)
        if n_phi % 2 != 0:
            raise ValueError("n_phi must be even for the cross-pole continuation")
        self.n_theta = int(n_theta)
        self.n_phi = int(n_phi)
        self.dtheta = np.pi / self.n_theta
        self.dphi = 2.0 * np.pi / self.n_phi
        self.thetas = (np.arange(self.n_theta) + 0.5) * self.dtheta
        self.phis = np.arange(self.n_phi) * self.dphi
        self._m = np.fft.rfftfreq(self.n_phi, d=1.0 / self.n_phi)
        self._sin = np.sin(self.thetas)
        self._cot = np.cos(self.thetas) / self._sin
        self._implicit_cache: dict[float, list] = {}

    def __repr__(self):
        return (f"Sphere2(rho={self.profile.label!r}, "
                f"n_theta={self.n_theta}, n_phi={self.n_phi})")

    # -- grid ---------------------------------------------------------------

    @property
    def grid_shape(self):
        return (self.n_theta, self.n_phi)

    @property
    def n_nodes(self):
        return self.n_theta * self.n_phi

    def grid_points(self):
        """Unit vectors of the chart grid, shape (n_theta, n_phi, 3)."""
        th = self.thetas[:, None]
        ph = self.phis[None, :]
        return np.stack([np.sin(th) * np.cos(ph),
                         np.sin(th) * np.sin(ph),
                         np.broadcast_to(np.cos(th), (self.n_theta, self.n_phi))], axis=-1)

    def _require_grid(self, field):
        if field.shape[:2] != (self.n_theta, self.n_phi):
            raise GridTooCoarse(
                f"field shape {field.shape[:2]} does not match grid "
                f"({self.n_theta}, {self.n_phi})")
        if self.n_theta < 8 or self.n_phi < 8:
            raise GridTooCoarse("need at least 8 nodes per sphere grid dimension")

    # -- embedding and projection fields ---------------------------------------

    def embed(self, t, x):
        self._check_time(t)
        return float(self.profile(t)) * np.asarray(x, dtype=float)

    def projection_fields(self, t, x):
        """Tangent-plane projector I - x x^T at unit vector(s) x, (..., 3, 3)."""
        self._check_time(t)
        x = np.asarray(x, dtype=float)
        eye = np.eye(3)
        return eye - x[..., :, None] * x[..., None, :]

    # -- padded colatitude differences ---------------------------------------

    def _pad_poles(self, field):
        """Two ghost rings beyond each pole via f(-theta, phi) = f(theta, phi+pi)."""
        roll = self.n_phi // 2
        top = np.roll(field[1::-1], roll, axis=1)       # rows at -3h/2, -h/2
        bot = np.roll(field[:-3:-1], roll, axis=1)      # rows at pi+h/2, pi+3h/2
        return np.concatenate([top, field, bot], axis=0)

    def _dtheta_fd(self, field):
        p = self._pad_poles(field)
        return (p[:-4] - 8.0 * p[1:-3] + 8.0 * p[3:-1] - p[4:]) / (12.0 * self.dtheta)

    def _d2theta_fd(self, field):
        p = self._pad_poles(field)
        return (-p[:-4] + 16.0 * p[1:-3] - 30.0 * p[2:-2] + 16.0 * p[3:-1] - p[4:]) \
            / (12.0 * self.dtheta ** 2)

    def _dphi_spectral(self, field, order: int = 1):
        modes = np.fft.rfft(field, axis=1)
        shape = (1, -1) + (1,) * (field.ndim - 2)
        mult = (1j * self._m) ** order
        if order == 1 and self.n_phi % 2 == 0:
            mult = mult.copy()
            mult[-1] = 0.0
        return np.fft.irfft(modes * mult.reshape(shape), n=self.n_phi, axis=1)

    # -- calculus ----------------------------------------------------------------

    def frame_gradient(self, t, field):
        """Gradient components in the orthonormal frame (e_theta, e_phi) / rho.

        Output shape (n_theta, n_phi, 2, *value_shape).
        """
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        rho = float(self.profile(t))
        shape = (self.n_theta, 1) + (1,) * (field.ndim - 2)
        z_th = self._dtheta_fd(field) / rho
        z_ph = self._dphi_spectral(field) / (rho * self._sin.reshape(shape))
        return np.stack([z_th, z_ph], axis=2)

    def gradient_gnorm(self, t, field):
        z = self.frame_gradient(t, field)
        axes = tuple(range(2, z.ndim))
        return np.sqrt(np.sum(z * z, axis=axes))

    def laplace_beltrami(self, t, field):
        """(1/rho^2)[f_tt + cot(t) f_t + f_pp / sin^2(t)] on the chart grid."""
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        rho = float(self.profile(t))
        shape = (self.n_theta, 1) + (1,) * (field.ndim - 2)
        lap = (self._d2theta_fd(field)
               + self._cot.reshape(shape) * self._dtheta_fd(field)
               + self._dphi_spectral(field, order=2) / (self._sin ** 2).reshape(shape))
        return lap / rho ** 2

    def _ambient_frames(self):
        th = self.thetas[:, None]
        ph = self.phis[None, :]
        e_th = np.stack([np.cos(th) * np.cos(ph),
                         np.cos(th) * np.sin(ph),
                         np.broadcast_to(-np.sin(th), (self.n_theta, self.n_phi))], axis=-1)
        e_ph = np.stack([np.broadcast_to(-np.sin(ph), (self.n_theta, self.n_phi)),
                         np.broadcast_to(np.cos(ph), (self.n_theta, self.n_phi)),
                         np.zeros((self.n_theta, self.n_phi))], axis=-1)
        return e_th, e_ph

    def generator_residual(self, t, field):
        """Defect of composing projection-field derivatives twice vs the Laplacian."""
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        if field.ndim != 2:
            raise GridTooCoarse("generator residual is defined for scalar fields")
        self._require_grid(field)
        e_th, e_ph = self._ambient_frames()
        z = self.frame_gradient(t, field)
        grad_amb = z[..., 0, None] * e_th + z[..., 1, None] * e_ph
        total = np.zeros_like(field)
        for i in range(3):
            zi = self.frame_gradient(t, grad_amb[..., i])
            total += zi[..., 0] * e_th[..., i] + zi[..., 1] * e_ph[..., i]
        return total - self.laplace_beltrami(t, field)

    def volume_weights(self, t):
        """Exact spherical cell areas: total is 4 pi rho^2 up to rounding."""
        self._check_time(t)
        rho = float(self.profile(t))
        caps = np.cos(self.thetas - 0.5 * self.dtheta) - np.cos(self.thetas + 0.5 * self.dtheta)
        return np.broadcast_to((rho ** 2 * self.dphi * caps)[:, None],
                               (self.n_theta, self.n_phi)).copy()

    def volume_weights_dt(self, t):
        self._check_time(t)
        rho = float(self.profile(t))
        drho = float(self.profile.derivative(t))
        caps = np.cos(self.thetas - 0.5 * self.dtheta) - np.cos(self.thetas + 0.5 * self.dtheta)
        return np.broadcast_to((2.0 * rho * drho * self.dphi * caps)[:, None],
                               (self.n_theta, self.n_phi)).copy()

    def _compat_scalar(self, tgrid):
        # sphere: Ric = g / rho^2, d(g)/dt = (2 rho'/rho) g
        rho = self.profile(tgrid)
        return 2.0 * self.profile.derivative(tgrid) / rho + 1.0 / rho ** 2

    # -- interpolation -------------------------------------------------------------

    def interpolate_slice(self, field, x):
        """Bilinear interpolation at unit vectors x, with cross-pole padding."""
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        xr = x.reshape(-1, 3)
        theta = np.arccos(np.clip(xr[:, 2], -1.0, 1.0))
        phi = np.mod(np.arctan2(xr[:, 1], xr[:, 0]), 2.0 * np.pi)

        roll = self.n_phi // 2
        padded = np.concatenate([np.roll(field[:1], roll, axis=1), field,
                                 np.roll(field[-1:], roll, axis=1)], axis=0)
        padded = np.concatenate([padded, padded[:, :1]], axis=1)

        ti = (theta - 0.5 * self.dtheta) / self.dtheta  # index into padded rows - 1
        ti = np.clip(ti, -1.0, self.n_theta - 1.0 + 1e-12)
        i0 = np.floor(ti).astype(int)
        ft = ti - i0
        i0 += 1  # shift into padded coordinates

        pj = phi / self.dphi
        j0 = np.floor(pj).astype(int)
        fp = pj - j0
        j0 = np.clip(j0, 0, self.n_phi - 1)

        wshape = (-1,) + (1,) * (field.ndim - 2)
        w00 = ((1 - ft) * (1 - fp)).reshape(wshape)
        w01 = ((1 - ft) * fp).reshape(wshape)
        w10 = (ft * (1 - fp)).reshape(wshape)
        w11 = (ft * fp).reshape(wshape)
        vals = (w00 * padded[i0, j0] + w01 * padded[i0, j0 + 1]
                + w10 * padded[i0 + 1, j0] + w11 * padded[i0 + 1, j0 + 1])
        return vals.reshape(lead + field.shape[2:])

    # -- one-step conditional expectations -------------------------------------------

    def _mode_operator(self, m: int):
        n, h = self.n_theta, self.dtheta
        sign = -1.0 if m % 2 else 1.0
        D1 = np.zeros((n, n))
        D2 = np.zeros((n, n))

        def add(mat, i, j, val):
            if j == -1:
                mat[i, 0] += sign * val
            elif j == -2:
                mat[i, 1] += sign * val
            elif j == n:
                mat[i, n - 1] += sign * val
            elif j == n + 1:
                mat[i, n - 2] += sign * val
            else:
                mat[i, j] += val

        for i in range(n):
            add(D1, i, i - 2, 1.0 / (12 * h))
            add(D1, i, i - 1, -8.0 / (12 * h))
            add(D1, i, i + 1, 8.0 / (12 * h))
            add(D1, i, i + 2, -1.0 / (12 * h))
            add(D2, i, i - 2, -1.0 / (12 * h * h))
            add(D2, i, i - 1, 16.0 / (12 * h * h))
            add(D2, i, i, -30.0 / (12 * h * h))
            add(D2, i, i + 1, 16.0 / (12 * h * h))
            add(D2, i, i + 2, -1.0 / (12 * h * h))
        return D2 + np.diag(self._cot) @ D1 - np.diag(m ** 2 / self._sin ** 2)

    def _implicit_factors(self, kappa: float):
        factors = self._implicit_cache.get(kappa)
        if factors is None:
            eye = np.eye(self.n_theta)
            factors = [lu_factor(eye - kappa * self._mode_operator(int(m)))
                       for m in self._m]
            # time-dependent radii produce one kappa per slice: cap the cache
            # (FIFO) so long runs cannot accumulate factorizations unboundedly
            if len(self._implicit_cache) >= 32:
                self._implicit_cache.pop(next(iter(self._implicit_cache)))
            self._implicit_cache[kappa] = factors
        return factors

    def heat_semigroup_step(self, t, dt, field):
        """One implicit (backward Euler) step of the heat semigroup.

        Longitude is diagonalized by FFT; each azimuthal mode solves a dense
        colatitude system with the cross-pole parity folded into the matrix.
        Unconditionally stable, O(dt) accurate.
        """
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        rho = float(self.profile(t))
        kappa = 0.5 * dt / rho ** 2
        factors = self._implicit_factors(kappa)
        modes = np.fft.rfft(field, axis=1)
        flat = modes.reshape(self.n_theta, modes.shape[1], -1)
        out = np.empty_like(flat)
        for im in range(flat.shape[1]):
            rhs = flat[:, im, :]
            out[:, im, :] = (lu_solve(factors[im], rhs.real)
                             + 1j * lu_solve(factors[im], rhs.imag))
        return np.fft.irfft(out.reshape(modes.shape), n=self.n_phi, axis=1)

    def mc_step_mean(self, t, dt, field, n_paths: int, rng: np.random.Generator,
                     antithetic: bool = False):
        """One-step Monte Carlo conditional expectation at every grid node."""
        self._check_time(t)
        field = np.asarray(field, dtype=float)
        self._require_grid(field)
        nodes = self.grid_points().reshape(-1, 3)
        if antithetic:
            half = rng.standard_normal((nodes.shape[0], n_paths // 2, 3))
            incr = np.concatenate([half, -half], axis=1)
        else:
            incr = rng.standard_normal((nodes.shape[0], n_paths, 3))
        moved, _ = self.step_paths(nodes[:, None, :], t, dt, np.sqrt(dt) * incr)
        vals = self.interpolate_slice(field, moved.reshape(-1, 3))
        vals = vals.reshape((nodes.shape[0], n_paths) + field.shape[2:])
        return vals.mean(axis=1).reshape(field.shape)

    # -- forward path step --------------------------------------------------------

    def step_paths(self, states, t, dt, dW):
        """Projected Euler-Maruyama step with tangential noise and renormalization.

        states: unit vectors (..., 3); dW: ambient increments (..., 3) with
        variance dt per component.  The Ito drift -(dim/2) rho^-2 u dt keeps
        the one-step law consistent with the generator rho^-2 Laplacian / 2.
        Returns (new_states, max pre-renormalization constraint violation).
        """
        rho = float(self.profile(t))
        radial = np.sum(states * dW, axis=-1, keepdims=True) * states
        moved = states + (dW - radial) / rho - states * (dt / rho ** 2)
        norms = np.linalg.norm(moved, axis=-1, keepdims=True)
        violation = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
        return moved / norms, violation
