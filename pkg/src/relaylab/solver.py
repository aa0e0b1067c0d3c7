"""Pseudo-spectral integrator for forced 2D vorticity dynamics.

The prognostic variable is vorticity w on a periodic square grid. Velocity
is recovered through the stream function (Lap psi = -w, u = perp-grad psi),
the nonlinear term u . grad(w) is formed pointwise on the grid and
truncated with the 2/3 rule, and time stepping is classical RK4 with an
exact integrating factor for the viscous term, so the same dt works across
viscosity regimes.

Trajectory generation draws a Gaussian random initial field with a
power-law spectral envelope, integrates through a spinup window, then
records frames at a fixed interval. Blocks of trajectories are integrated
as one batched array; batched FFTs are bitwise-identical to per-field
transforms, so block size and worker count never change the output.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .errors import CflViolationError, NonFiniteFieldError
from .grid import Grid, workspace_for

CFL_SAFETY = 0.5

_malloc_tuned = False


def _tune_malloc():
    """Raise glibc's mmap threshold once per process.

    The stepper churns through MB-sized temporaries; with the default
    threshold every one is a fresh mmap plus page faults, which costs more
    than the arithmetic. No effect on results, no-op off glibc.
    """
    global _malloc_tuned
    if _malloc_tuned:
        return
    _malloc_tuned = True
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 512 * 1024 * 1024)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 512 * 1024 * 1024)  # M_TRIM_THRESHOLD
    except Exception:
        pass


@dataclass(frozen=True)
class SolverConfig:
    """Physical and numerical parameters for one integration.

    The initial condition is a zero-mean Gaussian random field whose
    spectral standard deviation follows (|k|^2 + ic_tau^2)^(-ic_power/2),
    rescaled so the ensemble vorticity RMS equals ic_scale. On top of the
    random part, ic_base_amplitude adds the forcing-locked shear profile
    cos(k_f y), so runs can start near the shear-saturated state instead
    of spending the whole window spinning it up.
    """

    nu: float
    k_f: int = 4
    forcing_amplitude: float = 0.1
    dt: float = 1e-3
    record_interval: float = 1.0
    spinup_time: float = 10.0
    seed: int = 0
    ic_kind: str = "gaussian"
    ic_scale: float = 1.0
    ic_tau: float = 7.0
    ic_power: float = 2.5
    ic_base_amplitude: float = 0.0
    ic_blob_count: int = 2
    ic_blob_radius: float = 0.55
    ic_blob_strength: float = 1.2
    ic_blob_min_separation: float = 0.0
    ic_blob_anchor_spread: float = 0.0
    ic_blob_anchor_radius: float = 0.0
    grid: Grid = Grid()

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.k_f <= 0:
            raise ValueError("k_f must be a positive integer")
        if self.ic_kind not in ("gaussian", "vortex_blobs"):
            raise ValueError(f"unknown ic_kind {self.ic_kind!r}")
        if self.dt <= 0 or self.record_interval <= 0 or self.spinup_time < 0:
            raise ValueError("dt, record_interval must be positive; spinup_time nonnegative")
        n = round(self.record_interval / self.dt)
        if abs(self.dt * n - self.record_interval) > 1e-12:
            raise ValueError(
                f"record_interval={self.record_interval} is not an integer "
                f"multiple of dt={self.dt}")

    @property
    def steps_per_frame(self) -> int:
        return round(self.record_interval / self.dt)


@dataclass
class Trajectory:
    """Recorded frames (float32, shape (n_frames, nx, ny)) plus provenance."""

    frames: np.ndarray
    config: SolverConfig
    trajectory_id: int = 0

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[0] < 1:
            raise ValueError("frames must be a nonempty (n_frames, nx, ny) array")
        if self.frames.shape[1:] != self.config.grid.shape:
            raise ValueError("frame shape disagrees with the configured grid")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class StreamVelocity:
    """Stream function and the divergence-free velocity derived from it."""

    psi: np.ndarray
    ux: np.ndarray
    uy: np.ndarray


def _require_finite(field, name="field"):
    if not np.all(np.isfinite(field)):
        bad = np.argwhere(~np.isfinite(np.asarray(field)))[0]
        raise NonFiniteFieldError(
            f"{name} has a non-finite entry at index {tuple(int(i) for i in bad)}",
            index=tuple(int(i) for i in bad))


def _grid_for(field, grid):
    if grid is not None:
        return grid
    return Grid(nx=field.shape[-2], ny=field.shape[-1])


def poisson_solve(omega, grid: Grid | None = None):
    """Solve Lap(psi) = -omega spectrally; the k=0 mode is projected out."""
    omega = np.asarray(omega, dtype=np.float64)
    _require_finite(omega, "omega")
    ws = workspace_for(_grid_for(omega, grid))
    w_hat = ws.fft(omega)
    psi_hat = w_hat * ws.inv_k2  # inv_k2 is zero at k=0: mean projected out
    return ws.to_real(psi_hat)


def velocity_from_stream(psi, grid: Grid | None = None):
    """Velocity (ux, uy) = (d psi/dy, -d psi/dx), computed spectrally."""
    psi = np.asarray(psi, dtype=np.float64)
    _require_finite(psi, "psi")
    ws = workspace_for(_grid_for(psi, grid))
    psi_hat = ws.fft(psi)
    ux = ws.to_real(1j * ws.ky * psi_hat)
    uy = ws.to_real(-1j * ws.kx * psi_hat)
    return ux, uy


def stream_velocity(omega, grid: Grid | None = None) -> StreamVelocity:
    """Bundle psi and (ux, uy) recovered from a vorticity field."""
    psi = poisson_solve(omega, grid)
    ux, uy = velocity_from_stream(psi, grid)
    return StreamVelocity(psi=psi, ux=ux, uy=uy)


def advect(omega, velocity, grid: Grid | None = None):
    """Advection term u . grad(w), 2/3-truncated after the pointwise product."""
    omega = np.asarray(omega, dtype=np.float64)
    ux, uy = velocity
    _require_finite(omega, "omega")
    _require_finite(ux, "ux")
    _require_finite(uy, "uy")
    if omega.shape != ux.shape or omega.shape != uy.shape:
        raise ValueError("omega and velocity grids disagree")
    ws = workspace_for(_grid_for(omega, grid))
    w_hat = ws.fft(omega)
    gx = ws.to_real(1j * ws.kx * w_hat)
    gy = ws.to_real(1j * ws.ky * w_hat)
    product_hat = ws.fft(ux * gx + uy * gy)
    return ws.to_real(product_hat * ws.dealias)


def forcing_field(grid: Grid, k_f: int, amplitude: float):
    """Stationary vorticity-space forcing amplitude * cos(k_f * y)."""
    if not 0 < k_f < grid.nx / 3:
        raise ValueError(f"k_f={k_f} outside the dealiased band (0, {grid.nx / 3:g})")
    _, y = grid.coordinates()
    scale = 2.0 * np.pi / grid.domain_length
    return amplitude * np.cos(k_f * scale * y)


def energy_enstrophy(omega, grid: Grid | None = None):
    """Kinetic energy and enstrophy per unit area (spectral quadrature)."""
    omega = np.asarray(omega, dtype=np.float64)
    ws = workspace_for(_grid_for(omega, grid))
    w_hat = ws.fft(omega) / ws.grid.n_points
    power = np.abs(w_hat) ** 2
    enstrophy = 0.5 * float(np.sum(power))
    energy = 0.5 * float(np.sum(power * ws.inv_k2))
    return energy, enstrophy


class _Stepper:
    """Batched integrating-factor RK4 core operating on fft2 spectra.

    State is a (batch, nx, ny) complex array of unnormalised fft2
    coefficients. Velocity components and vorticity gradients are
    recovered two-per-inverse-transform by packing Hermitian spectra
    into the real and imaginary parts of one complex field.
    """

    def __init__(self, config: SolverConfig):
        self.config = config
        self.ws = ws = workspace_for(config.grid)
        if not 0 < config.k_f < config.grid.nx / 3:
            raise ValueError(f"k_f={config.k_f} outside the dealiased band")
        dt = config.dt
        decay = np.exp(-config.nu * ws.k2 * dt)
        self.e_full = decay
        self.e_half = np.exp(-config.nu * ws.k2 * (dt / 2.0))
        # Packed multipliers: ifft((kx + i ky)/k^2 * w_hat) = ux + i uy and
        # ifft(i (kx + i ky) * w_hat) = dw/dx + i dw/dy, because the two
        # Hermitian component spectra land in the real and imaginary parts.
        kc = ws.kx + 1j * ws.ky
        self.pack_vel = kc * ws.inv_k2
        self.pack_grad = 1j * kc
        self.neg_mask = -ws.dealias.astype(np.float64)
        self.f_hat = ws.fft(forcing_field(config.grid, config.k_f,
                                          config.forcing_amplitude).astype(np.float64))
        self.umax_limit = CFL_SAFETY * config.grid.dx / dt

    def rhs(self, w_hat, check=False, step_index=None):
        """N(w_hat) = -dealias(fft(u . grad w)) + f_hat."""
        packed = np.empty((2,) + w_hat.shape, dtype=np.complex128)
        np.multiply(self.pack_vel, w_hat, out=packed[0])
        np.multiply(self.pack_grad, w_hat, out=packed[1])
        fields = sfft.ifft2(packed, axes=(-2, -1), overwrite_x=True)
        vel, grad = fields[0], fields[1]
        if check:
            # component-wise max speed, read off the interleaved float view
            flat = vel.view(np.float64)
            umax = max(float(flat.max()), -float(flat.min()))
            if not np.isfinite(umax):
                raise NonFiniteFieldError(
                    f"state became non-finite at step {step_index}")
            if umax > self.umax_limit:
                raise CflViolationError(
                    umax, self.config.dt,
                    CFL_SAFETY * self.config.grid.dx / umax, step=step_index)
        product = vel.real * grad.real
        product += vel.imag * grad.imag
        out = sfft.fft2(product, axes=(-2, -1))
        out *= self.neg_mask
        out += self.f_hat
        return out

    def step(self, w_hat, step_index=None):
        """One RK4 step with exact viscous integrating factor."""
        dt = self.config.dt
        e, eh = self.e_full, self.e_half
        k1 = self.rhs(w_hat, check=True, step_index=step_index)
        stage = w_hat + (dt / 2.0) * k1
        stage *= eh
        k2 = self.rhs(stage)
        ehw = eh * w_hat
        k3 = self.rhs(ehw + (dt / 2.0) * k2)
        stage4 = eh * k3
        stage4 *= dt
        stage4 += e * w_hat
        k4 = self.rhs(stage4)
        # out = e*(w + dt/6 k1) + dt/6 * (2 eh (k2+k3) + k4)
        k2 += k3
        k2 *= eh
        k4 += 2.0 * k2
        k4 *= dt / 6.0
        out = w_hat + (dt / 6.0) * k1
        out *= e
        out += k4
        out[..., 0, 0] = 0.0  # keep the Poisson problem solvable
        return out


def step(omega, config: SolverConfig):
    """Advance one vorticity field by a single dt."""
    omega = np.asarray(omega, dtype=np.float64)
    _require_finite(omega, "omega")
    stepper = _Stepper(config)
    w_hat = stepper.ws.fft(omega)
    w_hat[..., 0, 0] = 0.0
    return stepper.ws.to_real(stepper.step(w_hat))


def _gaussian_spectrum(config: SolverConfig, rng, batch: int):
    """Batched fft2 spectra of Gaussian random fields with the power-law
    envelope (|k|^2 + tau^2)^(-power/2), rescaled to ic_scale RMS."""
    ws = workspace_for(config.grid)
    envelope = (ws.k2 + config.ic_tau**2) ** (-config.ic_power / 2.0)
    envelope[0, 0] = 0.0
    envelope *= ws.dealias
    if config.ic_scale == 0.0:
        return np.zeros((batch,) + config.grid.shape, dtype=np.complex128)
    # ifft2(fft2(white) * A) has ensemble variance sum(A^2) / n_points
    sigma = np.sqrt(np.sum(envelope**2) / config.grid.n_points)
    envelope *= config.ic_scale / sigma
    white = rng.standard_normal((batch, config.grid.nx, config.grid.ny))
    return sfft.fft2(white, axes=(-2, -1)) * envelope


def _blob_spectrum(config: SolverConfig, rng, batch: int):
    """Same-sign Gaussian vortex blobs at uniformly random positions.

    Each blob carries circulation ic_blob_strength; zeroing the k=0 mode
    supplies the uniform compensating background the periodic domain
    requires. The random state is just the blob centres, so the ensemble
    is a thin, low-dimensional family of coherent structures.
    """
    ws = workspace_for(config.grid)
    n = config.grid.n_points
    a2 = config.ic_blob_radius**2
    length = config.grid.domain_length
    amp = config.ic_blob_strength * n / length**2
    shape = np.exp(-0.5 * ws.k2 * a2) * ws.dealias
    w_hat = np.zeros((batch,) + config.grid.shape, dtype=np.complex128)
    for b in range(batch):
        centres = _draw_centres(rng, config.ic_blob_count, length,
                                config.ic_blob_min_separation,
                                config.ic_blob_anchor_spread,
                                config.ic_blob_anchor_radius)
        phase = np.zeros(config.grid.shape, dtype=np.complex128)
        for cx, cy in centres:
            phase += np.exp(-1j * (ws.kx * cx + ws.ky * cy))
        w_hat[b] = amp * shape * phase
    return w_hat


def _anchor_points(count, length, radius):
    """Home positions evenly spaced on a circle about the domain centre."""
    angles = 2.0 * np.pi * np.arange(count) / count
    if radius <= 0.0:
        radius = length / 4.0
    centre = length / 2.0
    return np.stack([centre + radius * np.cos(angles),
                     centre + radius * np.sin(angles)], axis=1)


def _draw_centres(rng, count, length, min_separation, anchor_spread,
                  anchor_radius=0.0):
    """Blob centres: uniform over the domain, or Gaussian wobbles around
    fixed anchors when anchor_spread > 0; rejection-sampled to keep a
    minimum toroidal gap either way."""
    anchors = (_anchor_points(count, length, anchor_radius)
               if anchor_spread > 0 else None)
    for _ in range(10000):
        if anchors is None:
            centres = rng.uniform(0.0, length, size=(count, 2))
        else:
            centres = anchors + anchor_spread * rng.standard_normal((count, 2))
            centres %= length
        if min_separation <= 0.0 or count == 1:
            return centres
        diff = centres[:, None, :] - centres[None, :, :]
        diff = np.abs(diff)
        diff = np.minimum(diff, length - diff)
        dist = np.hypot(diff[..., 0], diff[..., 1])
        dist[np.diag_indices(count)] = np.inf
        if dist.min() >= min_separation:
            return centres
    raise ValueError("could not place blobs with the requested separation")


def _initial_spectrum(config: SolverConfig, rng, batch: int):
    """Batched fft2 spectra of the configured initial-condition family."""
    if config.ic_kind == "vortex_blobs":
        w_hat = _blob_spectrum(config, rng, batch)
        w_hat += _gaussian_spectrum(config, rng, batch)  # dressing
    else:
        w_hat = _gaussian_spectrum(config, rng, batch)
    if config.ic_base_amplitude != 0.0:
        base = forcing_field(config.grid, config.k_f, config.ic_base_amplitude)
        w_hat += sfft.fft2(base.astype(np.float64))
    w_hat[:, 0, 0] = 0.0
    return w_hat


def generate_trajectories(configs, n_frames: int, trajectory_ids=None):
    """Integrate a block of same-dynamics trajectories as one batch.

    All configs must agree on everything except the seed; each entry gets
    its own random initial condition. Returns one Trajectory per config.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    _tune_malloc()
    configs = list(configs)
    if not configs:
        return []
    base = configs[0]
    for cfg in configs[1:]:
        if replace(cfg, seed=base.seed) != base:
            raise ValueError("block members must share all non-seed parameters")
    if trajectory_ids is None:
        trajectory_ids = list(range(len(configs)))

    stepper = _Stepper(base)
    ws = stepper.ws
    w_hat = np.concatenate([
        _initial_spectrum(cfg, np.random.default_rng(cfg.seed), 1)
        for cfg in configs])

    n_spin = round(base.spinup_time / base.dt)
    if abs(n_spin * base.dt - base.spinup_time) > 1e-9:
        raise ValueError("spinup_time must be an integer multiple of dt")
    per_frame = base.steps_per_frame

    frames = np.empty((len(configs), n_frames, base.grid.nx, base.grid.ny),
                      dtype=np.float32)
    step_index = 0
    for _ in range(n_spin):
        w_hat = stepper.step(w_hat, step_index=step_index)
        step_index += 1
    frames[:, 0] = np.real(ws.ifft(w_hat)).astype(np.float32)
    for i in range(1, n_frames):
        for _ in range(per_frame):
            w_hat = stepper.step(w_hat, step_index=step_index)
            step_index += 1
        frames[:, i] = np.real(ws.ifft(w_hat)).astype(np.float32)

    return [Trajectory(frames=frames[j], config=cfg, trajectory_id=tid)
            for j, (cfg, tid) in enumerate(zip(configs, trajectory_ids))]


def generate_trajectory(config: SolverConfig, n_frames: int,
                        trajectory_id: int = 0) -> Trajectory:
    """Spin up from a seeded random field, then record n_frames frames."""
    return generate_trajectories([config], n_frames, [trajectory_id])[0]
