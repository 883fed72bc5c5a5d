import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epidrift import (
    AgeStructure,
    ContactMatrix,
    ModelKind,
    RateParams,
    StructureError,
    ValidationError,
    aggregate_contact_matrix,
    transmission_rate_matrix,
)
from epidrift.structures import symmetrize_reciprocity


def reciprocity_gap(entries, pops):
    total = entries * pops[:, None]
    scale = np.maximum(np.abs(total), np.abs(total.T))
    return np.max(np.abs(total - total.T) / np.maximum(scale, 1e-300))


class TestAgeStructure:
    def test_fractions_sum_to_one(self):
        ages = AgeStructure(["a", "b", "c"], [3.0, 5.0, 2.0])
        assert abs(ages.group_fractions.sum() - 1.0) < 1e-12
        assert ages.total_population == 10.0
        assert ages.n_groups == 3

    def test_rejects_nonpositive_population(self):
        with pytest.raises(ValidationError):
            AgeStructure(["a", "b"], [1.0, 0.0])

    def test_rejects_label_mismatch(self):
        with pytest.raises(StructureError):
            AgeStructure(["a"], [1.0, 2.0])


class TestRateParams:
    def test_periods_are_exact_inverses(self):
        rates = RateParams(tau=2.0 / 3.0, gamma=0.5)
        assert rates.mean_latent_period == 2.0 / rates.tau
        assert rates.mean_infectious_period == 2.0 / rates.gamma

    def test_from_periods(self):
        rates = RateParams.from_periods(3.0, 4.0)
        assert rates.tau == pytest.approx(2.0 / 3.0)
        assert rates.gamma == pytest.approx(0.5)

    @pytest.mark.parametrize("tau,gamma", [(0.0, 1.0), (1.0, -2.0)])
    def test_rejects_nonpositive_rates(self, tau, gamma):
        with pytest.raises(ValidationError):
            RateParams(tau=tau, gamma=gamma)


class TestContactAggregation:
    def test_identity_when_groups_equal_bands(self):
        ages = AgeStructure(["a", "b"], [2.0, 3.0])
        raw = np.array([[4.0, 3.0], [2.0, 5.0]])  # 3*2 == 2*3: already reciprocal
        out = aggregate_contact_matrix(raw, [2.0, 3.0], ["a", "b"], {"a": ["a"], "b": ["b"]})
        np.testing.assert_allclose(out.entries, raw, rtol=1e-12)
        assert out.ages.group_labels == ages.group_labels

    def test_four_bands_to_two_groups_matches_per_individual_oracle(self):
        # populations per band; individuals in a band all share its contact row
        labels = ["a", "b", "c", "d"]
        pops = np.array([1.0, 1.0, 2.0, 2.0])
        rng = np.random.default_rng(3)
        raw = rng.uniform(0.0, 5.0, size=(4, 4))
        groups = {"ab": ["a", "b"], "cd": ["c", "d"]}
        out = aggregate_contact_matrix(raw, pops, labels, groups)

        # oracle: total contacts made from one group of individuals to the
        # other, divided by the contactor group's population, then the same
        # reciprocity averaging applied
        def total_contacts(rows, cols):
            return sum(pops[r] * raw[r, c] for r in rows for c in cols)

        agg = np.empty((2, 2))
        for i, rows in enumerate([(0, 1), (2, 3)]):
            for j, cols in enumerate([(0, 1), (2, 3)]):
                agg[i, j] = total_contacts(rows, cols) / pops[list(rows)].sum()
        group_pops = np.array([2.0, 4.0])
        expected = 0.5 * (agg * group_pops[:, None] + (agg * group_pops[:, None]).T) / group_pops[:, None]
        np.testing.assert_allclose(out.entries, expected, rtol=1e-12)

        # the spec'd closed form for the off-diagonal entry, pre-symmetrization
        entry_ab_cd = (
            pops[0] * (raw[0, 2] + raw[0, 3]) + pops[1] * (raw[1, 2] + raw[1, 3])
        ) / (pops[0] + pops[1])
        assert agg[0, 1] == pytest.approx(entry_ab_cd, rel=1e-12)

    def test_unassigned_band_is_structural_error(self):
        with pytest.raises(StructureError):
            aggregate_contact_matrix(
                np.ones((2, 2)), [1.0, 1.0], ["a", "b"], {"only": ["a"]}
            )

    def test_duplicate_band_assignment_rejected(self):
        with pytest.raises(StructureError):
            aggregate_contact_matrix(
                np.ones((2, 2)), [1.0, 1.0], ["a", "b"], {"x": ["a", "b"], "y": ["b"]}
            )

    def test_negative_entries_rejected(self):
        with pytest.raises(ValidationError):
            aggregate_contact_matrix(
                np.array([[1.0, -0.1], [0.1, 1.0]]), [1.0, 1.0], ["a", "b"],
                {"a": ["a"], "b": ["b"]},
            )

    @settings(max_examples=50, deadline=None)
    @given(st.data())
    def test_aggregation_preserves_reciprocity(self, data):
        n_bands = data.draw(st.integers(2, 6))
        raw = np.array(
            data.draw(
                st.lists(
                    st.lists(st.floats(0.0, 10.0), min_size=n_bands, max_size=n_bands),
                    min_size=n_bands,
                    max_size=n_bands,
                )
            )
        )
        pops = np.array(data.draw(st.lists(st.floats(1.0, 1e6), min_size=n_bands, max_size=n_bands)))
        split = data.draw(st.integers(1, n_bands - 1))
        labels = [f"b{i}" for i in range(n_bands)]
        groups = {"young": labels[:split], "old": labels[split:]}
        out = aggregate_contact_matrix(raw, pops, labels, groups)
        assert reciprocity_gap(out.entries, out.ages.group_populations) < 1e-9


class TestTransmissionRateMatrix:
    def setup_method(self):
        self.ages = AgeStructure(["young", "old"], [3.0, 2.0])
        self.contact = ContactMatrix(np.array([[1.0, 2.0], [3.0, 4.0]]), self.ages)

    def test_sbm_unit_beta_returns_contacts(self):
        out = transmission_rate_matrix([1.0], self.contact, ModelKind.SBM)
        np.testing.assert_array_equal(out, self.contact.entries)

    def test_mbm_row_scaling(self):
        out = transmission_rate_matrix([0.5, 2.0], self.contact, ModelKind.MBM)
        np.testing.assert_array_equal(out, np.array([[0.5, 1.0], [6.0, 8.0]]))

    def test_mbm_with_equal_betas_is_bitwise_sbm(self):
        b = 0.7310585786300049
        mbm = transmission_rate_matrix([b, b], self.contact, ModelKind.MBM)
        sbm = transmission_rate_matrix([b], self.contact, ModelKind.SBM)
        assert np.array_equal(mbm, sbm)

    @pytest.mark.parametrize("scale", [0.1, 2.0, 17.5])
    def test_positive_homogeneity(self, scale):
        base = transmission_rate_matrix([0.3, 0.9], self.contact, ModelKind.MBM)
        scaled = transmission_rate_matrix(
            np.array([0.3, 0.9]) * scale, self.contact, ModelKind.MBM
        )
        np.testing.assert_allclose(scaled, scale * base, rtol=1e-12)

    def test_wrong_beta_length_is_structural_error(self):
        with pytest.raises(StructureError):
            transmission_rate_matrix([1.0, 2.0], self.contact, ModelKind.SBM)
        with pytest.raises(StructureError):
            transmission_rate_matrix([1.0], self.contact, ModelKind.MBM)


class TestReciprocity:
    def test_constructor_rejects_nonreciprocal(self):
        ages = AgeStructure(["a", "b"], [1.0, 1.0])
        with pytest.raises(ValidationError):
            ContactMatrix(np.array([[1.0, 2.0], [1.0, 1.0]]), ages)

    def test_symmetrization_fixes_raw_survey_matrix(self):
        ages = AgeStructure(["a", "b"], [5.0, 1.0])
        raw = np.array([[2.0, 1.0], [9.0, 3.0]])
        fixed = symmetrize_reciprocity(raw, ages)
        assert reciprocity_gap(fixed.entries, ages.group_populations) < 1e-12
        # total contacts between the two groups are preserved
        assert fixed.entries[0, 1] * 5.0 == pytest.approx((1.0 * 5.0 + 9.0 * 1.0) / 2.0)
