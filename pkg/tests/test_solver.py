import numpy as np
import pytest

from bifluid_lab import closure as cl
from bifluid_lab import diagnostics as dg
from bifluid_lab import grid as gr
from bifluid_lab import solver as sv
from bifluid_lab.errors import CFLError, DomainError


def line_grid(cells=64, length=1.0):
    return gr.make_grid(1, length, cells)


def default_params(**kw):
    return cl.ClosureParams(kw.pop("gp", 2.0), kw.pop("gm", 2.0), c0=kw.pop("c0", 2.0))


def default_config(g, **kw):
    params = kw.pop("closure", default_params())
    reg = kw.pop("reg", cl.RegularizationParams(delta=0.1, B=4.0))
    return sv.SimConfig(closure=params, reg=reg, grid=g, **kw)


def cosine_data(g, base=1.0, amp=0.2, n_scale=1.0, u_amp=0.1, h_amp=0.1):
    if g.dim == 1:
        x = g.axis(0)
        prof = base * (1.0 + amp * np.cos(np.pi * x / g.extent[0]))
        sine = np.sin(np.pi * x / g.extent[0])
        u = u_amp * sine[None, :]
        h = h_amp * sine
    else:
        X, Y = g.coords()
        cx = np.cos(np.pi * X / g.extent[0]) * np.cos(np.pi * Y / g.extent[1])
        sx = np.sin(np.pi * X / g.extent[0]) * np.sin(np.pi * Y / g.extent[1])
        prof = base * (1.0 + amp * cx)
        u = np.stack([u_amp * sx, -0.5 * u_amp * sx])
        h = h_amp * sx
    return sv.InitialData(
        rho0=gr.ScalarField(g, prof, gr.NEUMANN),
        n0=gr.ScalarField(g, n_scale * prof, gr.NEUMANN),
        u0=gr.VectorField(g, u, gr.DIRICHLET),
        magnetic0=gr.ScalarField(g, h, gr.DIRICHLET),
    )


class TestConfigValidation:
    def test_viscosity_hypothesis(self):
        g = line_grid()
        with pytest.raises(DomainError, match=r"2\*mu \+ 3\*lambda >= 0"):
            default_config(g, mu=1.0, lam=-1.0)
        with pytest.raises(DomainError, match="mu > 0"):
            default_config(g, mu=0.0)
        with pytest.raises(DomainError, match="nu > 0"):
            default_config(g, nu=0.0)

    def test_b_hypothesis_checked(self):
        g = line_grid()
        params = cl.ClosureParams(6.0, 1.5, c0=2.0)  # A = 4, so B >= 6
        with pytest.raises(DomainError, match="B >= A"):
            default_config(g, closure=params, reg=cl.RegularizationParams(0.1, 4.0))


class TestContinuity:
    def test_neumann_heat_decay_oracle(self):
        # u = 0: the density solves the heat equation; compare to the analytic
        # cosine-mode decay
        g = line_grid(128)
        x = g.axis(0)
        eps = 0.05
        cfg = default_config(g, epsilon=eps, dt=2e-4, t_end=0.1, modes=4)
        prof = 1.0 + 0.5 * np.cos(np.pi * x)
        data = sv.InitialData(
            rho0=gr.ScalarField(g, prof, gr.NEUMANN),
            n0=gr.ScalarField(g, prof.copy(), gr.NEUMANN),
            u0=gr.VectorField(g, np.zeros((1, g.shape[0])), gr.DIRICHLET),
            magnetic0=gr.ScalarField(g, np.zeros(g.shape), gr.DIRICHLET),
        )
        state = sv.make_state(cfg, data)
        steps = 500
        for _ in range(steps):
            rho, n = sv.step_continuity(state, cfg.dt, eps)
            state.rho, state.n = rho, n
        t = steps * cfg.dt
        exact = 1.0 + 0.5 * np.cos(np.pi * x) * np.exp(-eps * np.pi**2 * t)
        assert np.max(np.abs(state.rho.values - exact)) < 2e-3

    def test_zero_velocity_zero_epsilon_is_identity(self):
        g = line_grid()
        cfg = default_config(g)
        data = cosine_data(g, u_amp=0.0)
        state = sv.make_state(cfg, data)
        rho, n = sv.step_continuity(state, 1e-3, 0.0)
        assert np.array_equal(rho.values, state.rho.values)
        assert np.array_equal(n.values, state.n.values)

    def test_proportional_densities_stay_proportional(self):
        g = line_grid()
        cfg = default_config(g, epsilon=1e-2, dt=5e-4, t_end=0.05)
        data = cosine_data(g, n_scale=0.5)
        state = sv.make_state(cfg, data)
        for _ in range(100):
            rho, n = sv.step_continuity(state, cfg.dt, cfg.epsilon)
            state.rho, state.n = rho, n
        assert np.max(np.abs(state.rho.values - 2.0 * state.n.values)) < 1e-12

    def test_mass_conserved_per_step(self):
        g = line_grid()
        cfg = default_config(g, epsilon=3e-2)
        data = cosine_data(g)
        state = sv.make_state(cfg, data)
        w = g.weight_array()
        m0 = float(np.sum(w * state.rho.values))
        for _ in range(50):
            rho, n = sv.step_continuity(state, 1e-3, cfg.epsilon)
            state.rho, state.n = rho, n
        assert abs(float(np.sum(w * state.rho.values)) - m0) <= 1e-10 * m0

    def test_cfl_rejection_with_suggestion(self):
        g = line_grid(32)
        cfg = default_config(g, modes=4)
        data = cosine_data(g, u_amp=2.0)
        state = sv.make_state(cfg, data)
        with pytest.raises(CFLError) as err:
            sv.step_continuity(state, 0.5, 0.0)
        assert 0.0 < err.value.suggested_dt < 0.5

    def test_positivity_and_ratio_cone(self):
        g = line_grid(64)
        cfg = default_config(g, epsilon=1e-2, modes=8)
        x = g.axis(0)
        n_vals = np.ones(g.shape)
        rho_vals = 1.0 + 0.4 * np.sin(np.pi * x)
        data = sv.InitialData(
            rho0=gr.ScalarField(g, rho_vals, gr.NEUMANN),
            n0=gr.ScalarField(g, n_vals, gr.NEUMANN),
            u0=gr.VectorField(g, (0.3 * np.sin(2 * np.pi * x))[None, :], gr.DIRICHLET),
            magnetic0=gr.ScalarField(g, np.zeros(g.shape), gr.DIRICHLET),
        )
        state = sv.make_state(cfg, data)
        c0 = 2.0
        for _ in range(150):
            rho, n = sv.step_continuity(state, 5e-4, cfg.epsilon)
            state.rho, state.n = rho, n
            assert np.min(state.rho.values) >= 0.0
            assert np.min(c0 * state.rho.values - state.n.values) >= -1e-10
            assert np.min(c0 * state.n.values - state.rho.values) >= -1e-10


class TestInduction:
    def test_resistive_eigenmode_decay(self):
        g = line_grid(128)
        x = g.axis(0)
        nu = 0.4
        cfg = default_config(g, nu=nu, modes=4, dt=2e-4, t_end=0.05)
        data = cosine_data(g, u_amp=0.0, h_amp=0.0)
        state = sv.make_state(cfg, data)
        state.magnetic = gr.ScalarField(g, np.sin(np.pi * x), gr.DIRICHLET)
        steps = 250
        for _ in range(steps):
            state.magnetic = sv.step_induction(state, cfg.dt, cfg)
        t = steps * cfg.dt
        exact = np.sin(np.pi * x) * np.exp(-nu * np.pi**2 * t)
        assert np.max(np.abs(state.magnetic.values - exact)) < 2e-3

    def test_zero_field_stays_zero(self):
        g = line_grid()
        cfg = default_config(g, modes=6)
        data = cosine_data(g, h_amp=0.0)
        state = sv.make_state(cfg, data)
        for _ in range(20):
            state.magnetic = sv.step_induction(state, 1e-3, cfg)
        assert np.max(np.abs(state.magnetic.values)) == 0.0

    def test_2d_solenoidal_invariant(self):
        g = gr.make_grid(2, 1.0, 16)
        cfg = default_config(g, modes=5, dt=1e-3, t_end=0.02)
        data = cosine_data(g, u_amp=0.3, h_amp=0.1)
        traj = sv.run_simulation(cfg, data, snapshots=4)
        assert max(l.divH_max for l in traj.ledgers) <= 1e-10


class TestMomentum:
    def test_uniform_state_is_stationary(self):
        g = line_grid()
        cfg = default_config(g, modes=8)
        data = cosine_data(g, amp=0.0, u_amp=0.0, h_amp=0.0)
        state = sv.make_state(cfg, data)
        coeffs, vacuum = sv.step_momentum(state, 1e-3, cfg)
        assert not vacuum
        assert np.max(np.abs(coeffs)) < 1e-13

    def test_mode_refinement_reduces_one_step_change(self):
        g = line_grid(128)
        errs = []
        results = {}
        for k in (8, 16, 32):
            cfg = default_config(g, modes=k, dt=1e-4, t_end=0.01)
            data = cosine_data(g)
            state = sv.make_state(cfg, data)
            new = sv.step(state, cfg.dt, cfg)
            results[k] = new.velocity_values()[0]
        errs = [
            np.max(np.abs(results[8] - results[32])),
            np.max(np.abs(results[16] - results[32])),
        ]
        assert errs[1] <= errs[0]


class TestStep:
    def test_uniform_state_unchanged_many_steps(self):
        g = line_grid(32)
        cfg = default_config(g, modes=4, dt=1e-3, t_end=1.0)
        data = cosine_data(g, amp=0.0, u_amp=0.0, h_amp=0.0)
        state = sv.make_state(cfg, data)
        rho0 = state.rho.values.copy()
        for _ in range(1000):
            state = sv.step(state, cfg.dt, cfg)
        assert np.max(np.abs(state.rho.values - rho0)) < 1e-12
        assert np.max(np.abs(state.velocity_values())) < 1e-12

    def test_self_convergence_under_dt_refinement(self):
        g = line_grid(64)
        finals = {}
        for dt in (2e-3, 1e-3, 5e-4):
            cfg = default_config(g, modes=8, dt=dt, t_end=0.04, epsilon=1e-2)
            traj = sv.run_simulation(cfg, cosine_data(g), snapshots=2)
            finals[dt] = traj.final_state().rho.values
        e1 = np.max(np.abs(finals[2e-3] - finals[5e-4]))
        e2 = np.max(np.abs(finals[1e-3] - finals[5e-4]))
        assert e2 < e1

    def test_determinism_bitwise(self):
        g = line_grid(48)
        outs = []
        for _ in range(2):
            cfg = default_config(g, modes=8, dt=1e-3, t_end=0.02, epsilon=1e-2)
            traj = sv.run_simulation(cfg, cosine_data(g), snapshots=4)
            outs.append(traj.final_state())
        assert np.array_equal(outs[0].rho.values, outs[1].rho.values)
        assert np.array_equal(outs[0].u_coeffs, outs[1].u_coeffs)
        assert np.array_equal(outs[0].magnetic.values, outs[1].magnetic.values)

    def test_energy_ledger_every_step(self):
        g = line_grid(32)
        cfg = default_config(g, modes=4, dt=1e-3, t_end=0.01)
        traj = sv.run_simulation(cfg, cosine_data(g), snapshots=3)
        assert len(traj.ledgers) == 11
        for led in traj.ledgers:
            led.validate()


class TestMollify:
    def make_raw(self, g, with_vacuum=False):
        x = g.axis(0)
        rho = 1.0 + 0.3 * np.cos(np.pi * x)
        if with_vacuum:
            rho = np.maximum(0.0, np.cos(np.pi * x))  # vanishes on half the box
        n = 0.8 * rho
        return sv.InitialData(
            rho0=gr.ScalarField(g, rho, gr.NEUMANN),
            n0=gr.ScalarField(g, n, gr.NEUMANN),
            u0=gr.VectorField(g, (0.1 * np.sin(np.pi * x))[None, :], gr.DIRICHLET),
            magnetic0=gr.ScalarField(g, np.zeros(g.shape), gr.DIRICHLET),
        )

    def test_in_range_data_unchanged_up_to_smoothing(self):
        g = line_grid(64)
        raw = self.make_raw(g)
        out = sv.mollify_initial_data(raw, 1e-4, B=4.0, c0=2.0)
        assert np.array_equal(out.rho0.values, raw.rho0.values)
        assert np.max(np.abs(out.u0.values - raw.u0.values)) < 5e-3

    def test_vacuum_clamped_to_floor(self):
        g = line_grid(64)
        raw = self.make_raw(g, with_vacuum=True)
        out = sv.mollify_initial_data(raw, 1e-3, B=4.0, c0=2.0)
        assert np.min(out.rho0.values) == pytest.approx(1e-3)
        assert np.max(out.rho0.values) <= (1e-3) ** (-1.0 / 8.0)

    def test_ratio_cone_preserved(self):
        g = line_grid(64)
        raw = self.make_raw(g)
        out = sv.mollify_initial_data(raw, 1e-2, B=4.0, c0=2.0)
        c0 = 2.0
        assert np.all(out.rho0.values <= c0 * out.n0.values + 1e-12)
        assert np.all(out.n0.values <= c0 * out.rho0.values + 1e-12)

    def test_density_distance_decreases_with_delta(self):
        g = line_grid(64)
        raw = self.make_raw(g, with_vacuum=True)
        gp = 2.0
        w = g.weight_array()
        dists = []
        for delta in (1e-1, 1e-2, 1e-3, 1e-4):
            out = sv.mollify_initial_data(raw, delta, B=4.0, c0=2.0)
            dists.append(
                float(np.sum(w * np.abs(out.rho0.values - raw.rho0.values) ** gp))
                ** (1.0 / gp)
            )
        assert all(b <= a for a, b in zip(dists, dists[1:]))

    def test_ratio_violation_rejected(self):
        g = line_grid(64)
        raw = self.make_raw(g)
        bad = sv.InitialData(
            rho0=raw.rho0,
            n0=gr.ScalarField(g, 10.0 * np.ones(g.shape), gr.NEUMANN),
            u0=raw.u0,
            magnetic0=raw.magnetic0,
        )
        with pytest.raises(DomainError, match="1/c0"):
            sv.mollify_initial_data(bad, 1e-3, B=4.0, c0=2.0)


class TestForcing:
    def test_forced_mass_balance_tracked(self):
        g = line_grid(64)

        def f_rho(t, coords):
            return 0.3 * np.ones(g.shape)

        forcing = sv.Forcing(rho=f_rho)
        cfg = default_config(g, modes=4, dt=1e-3, t_end=0.02, forcing=forcing)
        traj = sv.run_simulation(cfg, cosine_data(g, u_amp=0.0, h_amp=0.0), snapshots=2)
        m0 = traj.ledgers[0].mass_rho
        mT = traj.ledgers[-1].mass_rho
        assert mT - m0 == pytest.approx(traj.injected_mass_rho, rel=1e-12)
