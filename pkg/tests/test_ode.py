import numpy as np
import pytest

from epidrift import (
    AgeStructure,
    CompartmentState,
    ContactMatrix,
    LatentPath,
    ModelKind,
    NumericalInstabilityError,
    RateParams,
    force_of_infection,
    integrate,
    seeiir_rhs,
)
from epidrift.ode import daily_new_infections
from epidrift.structures import symmetrize_reciprocity

# ---------------------------------------------------------------------------
# independent fine-step oracle: classical RK4 with plain loops, no shared code
# ---------------------------------------------------------------------------


def _oracle_rhs(y, lam_vec, tau, gamma):
    out = np.zeros_like(y)
    for a in range(y.shape[0]):
        s, e1, e2, i1, i2, _ = y[a]
        out[a, 0] = -lam_vec[a] * s
        out[a, 1] = lam_vec[a] * s - tau * e1
        out[a, 2] = tau * (e1 - e2)
        out[a, 3] = tau * e2 - gamma * i1
        out[a, 4] = gamma * (i1 - i2)
        out[a, 5] = gamma * i2
    return out


def _oracle_lam(y, beta_vec, contact, fractions):
    a_count = y.shape[0]
    lam = np.zeros(a_count)
    for a in range(a_count):
        for b in range(a_count):
            lam[a] += beta_vec[a] * contact[a, b] * (y[b, 3] + y[b, 4]) / fractions[b]
    return lam


def rk4_trajectory(y0, beta_day, contact, fractions, tau, gamma, substeps=100):
    """4th-order Runge-Kutta at dt = 1/substeps, recorded on the daily grid."""
    y = y0.copy()
    out = [y.copy()]
    h = 1.0 / substeps
    for day in range(beta_day.shape[0]):
        beta_vec = beta_day[day]
        for _ in range(substeps):
            k1 = _oracle_rhs(y, _oracle_lam(y, beta_vec, contact, fractions), tau, gamma)
            y2 = y + 0.5 * h * k1
            k2 = _oracle_rhs(y2, _oracle_lam(y2, beta_vec, contact, fractions), tau, gamma)
            y3 = y + 0.5 * h * k2
            k3 = _oracle_rhs(y3, _oracle_lam(y3, beta_vec, contact, fractions), tau, gamma)
            y4 = y + h * k3
            k4 = _oracle_rhs(y4, _oracle_lam(y4, beta_vec, contact, fractions), tau, gamma)
            y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        out.append(y.copy())
    return np.array(out)


# ---------------------------------------------------------------------------


def single_group_scenario(weeks=30, sigma=0.04, beta0=0.038, seed_frac=1e-3):
    ages = AgeStructure(["all"], [1_000_000.0])
    contact = ContactMatrix([[8.0]], ages)
    rates = RateParams.from_periods(3.0, 4.0)
    rng = np.random.default_rng(7)
    path = LatentPath([np.log(beta0)], rng.standard_normal((1, weeks)), [sigma])
    initial = CompartmentState.from_seed(ages, [seed_frac])
    return ages, contact, rates, path, initial


class TestForceOfInfection:
    def test_zero_infectious_gives_zero(self):
        ages = AgeStructure(["a", "b"], [1.0, 1.0])
        state = CompartmentState(np.array([[0.5, 0, 0, 0, 0, 0], [0.5, 0, 0, 0, 0, 0]]))
        lam = force_of_infection(np.ones((2, 2)), state, ages)
        np.testing.assert_array_equal(lam, [0.0, 0.0])

    def test_scalar_case(self):
        ages = AgeStructure(["all"], [10.0])
        state = CompartmentState(np.array([[0.99, 0, 0, 0.01, 0, 0]]))
        lam = force_of_infection(np.array([[2.0]]), state, ages)
        assert lam[0] == pytest.approx(0.02, rel=1e-14)

    def test_two_group_hand_value(self):
        ages = AgeStructure(["a", "b"], [0.4, 0.6])
        state = CompartmentState(
            np.array([[0.39, 0, 0, 0.01, 0, 0], [0.58, 0, 0, 0.02, 0, 0]])
        )
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        lam = force_of_infection(m, state, ages)
        assert lam[0] == pytest.approx(1 * 0.01 / 0.4 + 2 * 0.02 / 0.6, rel=1e-12)
        assert lam[1] == pytest.approx(3 * 0.01 / 0.4 + 4 * 0.02 / 0.6, rel=1e-12)


class TestRhs:
    def test_disease_free_equilibrium(self):
        state = CompartmentState(np.array([[1.0, 0, 0, 0, 0, 0]]))
        deriv = seeiir_rhs(state, [0.0], RateParams(tau=1.0, gamma=0.5))
        np.testing.assert_array_equal(deriv, np.zeros((1, 6)))

    def test_hand_worked_derivative(self):
        state = CompartmentState(np.array([[0.9, 0.05, 0.03, 0.01, 0.01, 0.0]]))
        deriv = seeiir_rhs(state, [0.1], RateParams(tau=1.0, gamma=0.5))
        np.testing.assert_allclose(
            deriv[0], [-0.09, 0.04, 0.02, 0.025, 0.0, 0.005], rtol=1e-12, atol=1e-15
        )

    def test_mass_conservation_of_derivative(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            raw = rng.dirichlet(np.ones(12)).reshape(2, 6)
            state = CompartmentState(raw)
            deriv = seeiir_rhs(state, rng.uniform(0, 2, size=2), RateParams(tau=0.7, gamma=0.4))
            assert abs(deriv.sum()) < 1e-15


class TestIntegrate:
    def test_constant_state_without_contacts_or_seed(self):
        ages = AgeStructure(["a", "b"], [2.0, 3.0])
        contact = ContactMatrix(np.zeros((2, 2)), ages)
        rates = RateParams.from_periods(3.0, 4.0)
        path = LatentPath([0.0], np.zeros((1, 2)), [0.0])
        initial = CompartmentState.from_seed(ages, [0.0, 0.0])
        traj = integrate(initial, rates, path, contact, ModelKind.SBM, ages, 14)
        for t in range(15):
            np.testing.assert_allclose(traj.states[t], initial.proportions, atol=1e-14)
        np.testing.assert_array_equal(traj.new_infections, np.zeros((14, 2)))

    def test_matches_fine_step_rk4_oracle(self):
        ages, contact, rates, path, initial = single_group_scenario()
        traj = integrate(initial, rates, path, contact, ModelKind.SBM, ages, 210)
        beta_day = path.beta_by_day().T  # (T, 1)
        oracle = rk4_trajectory(
            initial.proportions, beta_day, contact.entries, ages.group_fractions,
            rates.tau, rates.gamma,
        )
        err = np.max(np.abs(traj.states - oracle))
        assert err < 1e-4
        # the epidemic is real: at least 5% attack rate
        assert traj.states[0, 0, 0] - traj.states[-1, 0, 0] > 0.05

    def test_mass_conserved_along_trajectory(self):
        ages, contact, rates, path, initial = single_group_scenario(sigma=0.15, beta0=0.05)
        traj = integrate(initial, rates, path, contact, ModelKind.SBM, ages, 210)
        drift = np.abs(traj.states.sum(axis=(1, 2)) - 1.0)
        assert drift.max() < 1e-8

    def test_monotonic_susceptible_and_removed(self):
        ages, contact, rates, path, initial = single_group_scenario(sigma=0.1, beta0=0.05)
        traj = integrate(initial, rates, path, contact, ModelKind.SBM, ages, 210)
        s = traj.states[:, 0, 0]
        r = traj.states[:, 0, 5]
        assert np.all(np.diff(s) <= 1e-15)
        assert np.all(np.diff(r) >= -1e-15)

    def test_second_order_convergence(self):
        ages, contact, rates, path, initial = single_group_scenario(beta0=0.045, sigma=0.0)
        beta_day = path.beta_by_day().T
        oracle = rk4_trajectory(
            initial.proportions, beta_day, contact.entries, ages.group_fractions,
            rates.tau, rates.gamma,
        )
        errors = []
        for spd in (1, 2):
            traj = integrate(
                initial, rates, path, contact, ModelKind.SBM, ages, 210, steps_per_day=spd
            )
            errors.append(np.max(np.abs(traj.states - oracle)))
        ratio = errors[0] / errors[1]
        assert 3.0 < ratio < 5.0

    def test_zero_seed_means_zero_infections(self):
        ages = AgeStructure(["a", "b"], [1.0, 3.0])
        contact = symmetrize_reciprocity(np.full((2, 2), 5.0), ages)
        rates = RateParams.from_periods(3.0, 4.0)
        path = LatentPath([0.0, 0.0], np.zeros((2, 4)), [0.0, 0.0])
        initial = CompartmentState.from_seed(ages, [0.0, 0.0])
        traj = integrate(initial, rates, path, contact, ModelKind.MBM, ages, 28)
        np.testing.assert_array_equal(traj.new_infections, np.zeros((28, 2)))

    def test_instability_raises_and_names_the_step(self):
        ages, contact, rates, _, initial = single_group_scenario(seed_frac=1e-2)
        wild = LatentPath([np.log(60.0)], np.zeros((1, 30)), [0.0])
        with pytest.raises(NumericalInstabilityError, match=r"day \d+"):
            integrate(initial, rates, wild, contact, ModelKind.SBM, ages, 210)

    def test_multigroup_against_oracle(self):
        ages = AgeStructure(["young", "mid", "old"], [4.5e6, 3.5e6, 2.0e6])
        raw = np.array([[7.0, 3.0, 1.0], [3.86, 4.0, 1.5], [2.25, 2.63, 2.5]])
        contact = symmetrize_reciprocity(raw, ages)
        rates = RateParams.from_periods(3.0, 4.0)
        rng = np.random.default_rng(12)
        path = LatentPath(
            np.log([0.018, 0.02, 0.016]), rng.standard_normal((3, 10)) * 0.5, [0.1, 0.1, 0.1]
        )
        initial = CompartmentState.from_seed(ages, [2e-4, 1e-4, 1e-4])
        traj = integrate(initial, rates, path, contact, ModelKind.MBM, ages, 70)
        beta_day = path.beta_by_day().T
        oracle = rk4_trajectory(
            initial.proportions, beta_day, contact.entries, ages.group_fractions,
            rates.tau, rates.gamma,
        )
        assert np.max(np.abs(traj.states - oracle)) < 1e-4


class TestDailyNewInfections:
    def test_constant_e2(self):
        e2 = np.full((8, 1), 0.02)
        np.testing.assert_allclose(daily_new_infections(e2, tau=0.7), np.full((7, 1), 0.014))

    def test_zero_e2(self):
        np.testing.assert_array_equal(
            daily_new_infections(np.zeros((5, 2)), tau=0.7), np.zeros((4, 2))
        )

    def test_linear_e2_exact_trapezoid(self):
        e2 = np.array([[0.01], [0.03]])
        delta = daily_new_infections(e2, tau=0.4)
        assert delta[0, 0] == pytest.approx(0.008, rel=1e-14)
