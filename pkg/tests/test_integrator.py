import math

import numpy as np
import pytest

import snls
from snls.grid import Field, Grid
from snls.integrator import SimParams, blowup_time, simulate, step


@pytest.fixture
def grid():
    return Grid(1, 256, 40.0)


@pytest.fixture
def phi(grid):
    return snls.gaussian_kernel(grid, 1.0, 0.5, s=2.0)


def l2_dist(a, b):
    return snls.norm(Field(a.grid, a.values - b.values), "l2")


class TestStep:
    def test_free_equation_when_lambda_disabled(self, grid):
        # lam has to be +-1; disable the nonlinearity with a zero field power
        # instead: eps=0 and u tiny enough that |u|^2 dt is negligible is not
        # exact, so test the linear limit through the exact group directly.
        u = snls.gaussian(grid, 1e-9, 2.0)
        params = SimParams(lam=1, sigma=1.0, eps=0.0, dt=1e-3, T=1.0, R=10.0)
        out, inc = step(u, params)
        exact = snls.free_group_apply(u, params.dt)
        assert inc is None
        assert l2_dist(out, exact) < 1e-20

    def test_mass_isometry_any_noise(self, grid, phi):
        params = SimParams(lam=1, sigma=1.0, eps=0.7, dt=1e-3, T=1.0, R=10.0)
        u = snls.soliton(grid)
        rng = snls.stream(0, "step")
        v, inc = step(u, params, phi, rng=rng)
        assert inc is not None
        assert abs(snls.norm(v) - snls.norm(u)) <= 1e-13 * snls.norm(u)

    def test_deterministic_strang_step(self, grid):
        params = SimParams(lam=1, sigma=1.0, eps=0.0, dt=1e-3, T=1.0, R=10.0)
        u = snls.soliton(grid)
        v, _ = step(u, params)
        assert abs(snls.norm(v) - snls.norm(u)) <= 1e-13 * snls.norm(u)

    def test_nonfinite_rejected(self, grid):
        params = SimParams(lam=1, sigma=1.0, eps=0.0, dt=1e-3, T=1.0, R=10.0)
        bad = Field(grid, np.full(grid.shape, np.inf, dtype=complex))
        with pytest.raises(ValueError, match="non-finite"):
            step(bad, params)


class TestSimParams:
    def test_violations_reported(self):
        with pytest.raises(ValueError, match="sigma"):
            SimParams(sigma=0.3).validate(1)
        with pytest.raises(ValueError, match="dt"):
            SimParams(dt=2.0, T=1.0).validate(1)
        with pytest.raises(ValueError, match="lambda"):
            SimParams(lam=2).validate(1)
        with pytest.raises(ValueError, match="2/\\(d-2\\)"):
            SimParams(sigma=2.0).validate(3)

    def test_r_must_exceed_initial_h1(self, grid):
        u = snls.soliton(grid)
        params = SimParams(lam=1, sigma=1.0, eps=0.0, dt=1e-3, T=0.01, R=1.0)
        with pytest.raises(ValueError, match="exceed"):
            simulate(u, params)


class TestDeterministicAccuracy:
    def test_soliton_closed_form(self):
        # u(t,x) = sqrt(2) sech(x - L/2) exp(-i t) solves the focusing cubic
        # flow; verified here against the integrator at two step sizes.
        g = Grid(1, 512, 40.0)
        u0 = snls.soliton(g)
        exact = Field(g, u0.values * np.exp(-1j))
        params = SimParams(lam=1, sigma=1.0, eps=0.0, dt=1e-3, T=1.0, R=10.0,
                           record_every=100)
        err1 = l2_dist(simulate(u0, params).final_state, exact)
        err2 = l2_dist(simulate(u0, params.replace(dt=5e-4)).final_state,
                       exact)
        assert err1 < 1e-3
        assert err1 / err2 > 3.5  # order ~2

    def test_hamiltonian_drift_second_order(self, grid):
        u0 = snls.soliton(grid)
        params = SimParams(lam=1, sigma=1.0, eps=0.0, dt=2e-3, T=1.0, R=10.0,
                           record_every=50)
        d1 = np.abs(simulate(u0, params).hamiltonian + 2.0 / 3.0).max()
        d2 = np.abs(simulate(u0, params.replace(dt=1e-3)).hamiltonian
                    + 2.0 / 3.0).max()
        assert d1 / d2 > 3.5

    def test_defocusing_censored(self, grid):
        u0 = snls.gaussian(grid, 2.0, 1.0)
        params = SimParams(lam=-1, sigma=2.0, eps=0.0, dt=5e-4, T=0.5, R=10.0)
        traj = simulate(u0, params)
        assert traj.censored
        assert blowup_time(traj) is None


class TestStochasticInvariants:
    def test_mass_conserved_over_long_noisy_run(self, grid, phi):
        params = SimParams(lam=1, sigma=1.0, eps=0.5, dt=1e-4, T=1.0, R=10.0,
                           record_every=100)
        u0 = snls.soliton(grid)
        traj = simulate(u0, params, phi=phi, rng=snls.stream(1, "mass"))
        drift = np.abs(traj.mass - traj.mass[0]).max() / traj.mass[0]
        assert drift <= 1e-10
        assert len(traj.times) >= 100

    def test_bit_identical_reruns(self, grid, phi):
        params = SimParams(lam=1, sigma=1.0, eps=0.5, dt=1e-3, T=0.2, R=10.0)
        u0 = snls.soliton(grid)
        a = simulate(u0, params, phi=phi, rng=snls.stream(2, "det"))
        b = simulate(u0, params, phi=phi, rng=snls.stream(2, "det"))
        assert (a.final_state.values == b.final_state.values).all()
        assert (a.mass == b.mass).all()
        assert (a.h1norm == b.h1norm).all()

    def test_eps_to_zero_consistency(self, grid, phi):
        # same stream, decreasing eps: sup-in-time L2 distance to the eps=0
        # path is nonincreasing
        params0 = SimParams(lam=1, sigma=1.0, eps=0.0, dt=1e-3, T=0.5, R=10.0)
        u0 = snls.soliton(grid)
        ref = simulate(u0, params0, record_states=True)
        dists = []
        for eps in (1e-1, 1e-2, 1e-3):
            traj = simulate(u0, params0.replace(eps=eps), phi=phi,
                            rng=snls.stream(3, "eps0"), record_states=True)
            dev = np.sqrt(grid.dV * (np.abs(traj.states - ref.states) ** 2
                                     ).sum(axis=1))
            dists.append(dev.max())
        assert dists[0] >= dists[1] >= dists[2]


class TestBlowup:
    def setup_method(self):
        self.g = Grid(1, 256, 40.0)
        self.u0 = snls.gaussian(self.g, 2.0, 1.0)
        self.params = SimParams(lam=1, sigma=2.0, eps=0.0, dt=5e-4, T=1.0,
                                R=10.0)

    def test_quintic_focusing_blows_up(self):
        traj = simulate(self.u0, self.params)
        assert traj.tauR is not None
        assert traj.tauR < 0.5
        # H1 at the trigger is at or above R
        assert traj.h1norm[-1] >= self.params.R or not math.isfinite(
            traj.h1norm[-1])

    def test_refinement_stability(self):
        t1 = simulate(self.u0, self.params).tauR
        t2 = simulate(self.u0, self.params.replace(dt=2.5e-4)).tauR
        assert abs(t1 - t2) <= 2 * self.params.dt

    def test_tau_monotone_in_threshold(self):
        traj = simulate(self.u0, self.params.replace(R=40.0))
        taus = [blowup_time(traj, R=r) for r in (5.0, 10.0, 20.0, 40.0)]
        taus = [t for t in taus if t is not None]
        assert all(a <= b for a, b in zip(taus, taus[1:]))

    def test_secondary_xnorm_trigger(self):
        params = self.params.replace(p=6.0, xnorm_trigger=True, R=9.0)
        traj = simulate(self.u0, params)
        assert traj.tauR is not None
        # with the integral co-trigger the crossing cannot be later
        plain = simulate(self.u0, self.params.replace(R=9.0))
        assert traj.tauR <= plain.tauR + 1e-12

    def test_subcritical_censored(self):
        params = self.params.replace(sigma=1.0)
        assert simulate(self.u0, params).censored


class TestEnsembleRunner:
    def test_matches_worker_counts(self):
        g = Grid(1, 64, 40.0)
        phi = snls.gaussian_kernel(g, 2.0, 0.5, s=2.0)
        u0 = snls.gaussian(g, 1.0, 3.0)
        params = SimParams(lam=1, sigma=1.0, eps=0.5, dt=4e-3, T=0.2, R=20.0)
        event = snls.make_tube_event(u0, params, rho=0.5, phi=phi)
        a = snls.run_ensemble(u0, params, phi, event, 300, 4, salt="w",
                              workers=1)
        b = snls.run_ensemble(u0, params, phi, event, 300, 4, salt="w",
                              workers=3)
        assert (a.indicators == b.indicators).all()
        assert (a.tau == b.tau).all()

    def test_weights_require_control(self):
        g = Grid(1, 64, 40.0)
        phi = snls.gaussian_kernel(g, 2.0, 0.5, s=2.0)
        u0 = snls.gaussian(g, 1.0, 3.0)
        params = SimParams(lam=1, sigma=1.0, eps=0.5, dt=4e-3, T=0.2, R=20.0)
        event = snls.survive_beyond(0.2, 20.0)
        with pytest.raises(ValueError, match="control"):
            snls.run_ensemble(u0, params, phi, event, 10, 0,
                              need_weights=True)
