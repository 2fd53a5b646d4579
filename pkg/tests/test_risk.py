import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smarthome_ldp.hmm import HmmParams, ObservationSequence
from smarthome_ldp.ldp import CategoryDomain
from smarthome_ldp.risk import (
    ObfuscationPolicy,
    SensitiveStateSet,
    apply_plan,
    capped_risk,
    emission_similarity,
    event_sensitivity,
    generate_candidates,
    load_similarity,
    obfuscate_sequence,
    sequence_risk,
    utility_loss,
    validate_similarity,
    write_similarity,
)

from conftest import enumerate_paths, random_model

SENS0 = SensitiveStateSet((0,))


@pytest.fixture
def split_model():
    # state 0 (sensitive) only emits a; state 1 emits b or c
    return HmmParams([0.5, 0.5], [[0.8, 0.2], [0.3, 0.7]],
                     [[1.0, 0.0, 0.0], [0.0, 0.6, 0.4]], symbols=("a", "b", "c"))


def seq(*obs):
    return ObservationSequence("h", list(obs))


class TestSensitivity:
    def test_all_states_sensitive(self):
        p = random_model(np.random.default_rng(0), 3, 4)
        s = event_sensitivity(p, seq(0, 1, 2, 3), SensitiveStateSet((0, 1, 2)))
        np.testing.assert_allclose(s, 1.0, atol=1e-12)

    def test_single_state(self):
        p = HmmParams([1.0], [[1.0]], [[0.5, 0.5]])
        np.testing.assert_allclose(event_sensitivity(p, seq(0, 1), SensitiveStateSet((0,))), 1.0)

    def test_empty_set_disallowed(self):
        with pytest.raises(ValueError):
            SensitiveStateSet(())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 3), st.integers(1, 5), st.integers(0, 2**32 - 1))
    def test_matches_enumeration(self, N, T, seed):
        rng = np.random.default_rng(seed)
        p = random_model(rng, N, 3)
        obs = rng.integers(0, 3, T)
        paths = enumerate_paths(p, obs)
        z = sum(paths.values())
        expect = np.zeros(T)
        for path, w in paths.items():
            expect += np.array([q == 0 for q in path]) * w / z
        np.testing.assert_allclose(event_sensitivity(p, seq(*obs), SENS0), expect, atol=1e-10)

    def test_ignored_symbols_score_zero(self, split_model):
        s = event_sensitivity(split_model, seq(0, 1, 0), SENS0, ignore=(0,))
        np.testing.assert_array_equal(s, [0.0, 0.0, 0.0])


class TestRisk:
    def test_saturates_at_five(self):
        assert capped_risk([1.0] * 5, 5) == 1.0
        assert capped_risk([1.0] * 9, 5) == 1.0

    def test_two_events(self):
        assert capped_risk([1.0, 1.0], 5) == pytest.approx(0.4)

    def test_no_mass(self, split_model):
        assert sequence_risk(split_model, seq(1, 2, 1), SENS0).aggregate_risk == 0.0

    def test_unambiguous_events(self, split_model):
        r = sequence_risk(split_model, seq(0, 1, 0), SENS0)
        np.testing.assert_allclose(r.per_event_sensitivity, [1, 0, 1])
        assert r.aggregate_risk == pytest.approx(0.4)

    @given(st.lists(st.floats(0, 1), max_size=12), st.floats(0, 1), st.integers(1, 8))
    def test_extend_monotone(self, prior, s, R):
        from smarthome_ldp.risk import RiskAssessment
        a = RiskAssessment(np.array(prior), capped_risk(prior, R), R)
        b = a.extend(s)
        assert 0 <= a.aggregate_risk <= b.aggregate_risk <= 1
        assert a.extend(0.0).aggregate_risk == a.aggregate_risk


class TestSimilarity:
    def test_loss_basics(self):
        d = CategoryDomain(("a", "b", "c"))
        sim = np.eye(4)
        sim[0, 1] = sim[1, 0] = 0.25
        assert utility_loss(d, sim, "a", "a") == 0.0
        assert utility_loss(d, sim, "a", "c") == 1.0
        assert utility_loss(d, sim, "a", "b") == pytest.approx(0.75)
        with pytest.raises(ValueError):
            utility_loss(d, sim, "a", "zzz")

    def test_identical_columns_zero_loss(self):
        p = HmmParams([0.5, 0.5], np.eye(2), [[0.2, 0.2, 0.6], [0.3, 0.3, 0.4]])
        sim = emission_similarity(p)
        assert sim[0, 1] == pytest.approx(1.0)
        validate_similarity(sim)

    def test_file_round_trip(self, tmp_path):
        d = CategoryDomain(("a", "b"))
        sim = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.0], [0.0, 0.0, 1.0]])
        write_similarity(tmp_path / "s.csv", sim, d.observation_symbols)
        np.testing.assert_array_equal(load_similarity(tmp_path / "s.csv", d), sim)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            validate_similarity(np.array([[1.0, 0.2], [0.3, 1.0]]))


class TestCandidates:
    def test_non_sensitive_symbol_ranks_first(self, split_model):
        sim = emission_similarity(split_model)
        cands = generate_candidates(split_model, seq(1, 0, 1), 1, 3, SENS0, sim)
        assert cands[0].name == "b"
        assert [c.name for c in cands] == ["b", "c"]

    def test_candidate_risk_is_fresh_recomputation(self, split_model):
        s = seq(0, 0, 1, 0)
        sim = emission_similarity(split_model)
        for c in generate_candidates(split_model, s, 1, 3, SENS0, sim):
            fresh = sequence_risk(split_model, s.replace(1, c.symbol), SENS0).aggregate_risk
            assert abs(c.candidate_risk - fresh) <= 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 5))
    def test_ranking_matches_hand_scores(self, seed, T):
        rng = np.random.default_rng(seed)
        p = random_model(rng, 2, 3)
        obs = rng.integers(0, 3, T)
        t = int(rng.integers(0, T))
        # belief at t from the other slots: enumerate with O_t marginalised out
        g = np.zeros(2)
        for path, _ in enumerate_paths(p, obs).items():
            w = p.pi[path[0]] * (p.emit[path[0], obs[0]] if t != 0 else 1.0)
            for u in range(1, T):
                w *= p.trans[path[u - 1], path[u]] * (p.emit[path[u], obs[u]] if u != t else 1.0)
            g[path[t]] += w
        score = p.emit[1]  # only state 1 is non-sensitive, renormalised mass is 1
        assert g[1] > 0
        expect = sorted((o for o in range(3) if o != obs[t] and score[o] > 0),
                        key=lambda o: (-score[o], o))
        got = [c.symbol for c in generate_candidates(p, seq(*obs), t, 3, SENS0, emission_similarity(p))]
        assert got == expect

    def test_excludes_original_and_ignored(self, split_model):
        sim = emission_similarity(split_model)
        cands = generate_candidates(split_model, seq(2, 0, 2), 1, 5, SENS0, sim, ignore=(1,))
        assert [c.name for c in cands] == ["c"]


class TestObfuscate:
    def test_noop_below_threshold(self, split_model):
        s = seq(1, 0, 1)
        out, plan = obfuscate_sequence(split_model, s, SENS0, 0.5)
        np.testing.assert_array_equal(out.obs, s.obs)
        assert plan.substitutions == [] and not plan.unmet_threshold

    def test_five_sensitive_events_to_threshold(self, split_model):
        s = seq(0, 0, 0, 0, 0)
        assert sequence_risk(split_model, s, SENS0).aggregate_risk == 1.0
        out, plan = obfuscate_sequence(split_model, s, SENS0, 0.2)
        assert plan.residual_risk <= 0.2
        assert sequence_risk(split_model, out, SENS0).aggregate_risk == plan.residual_risk
        assert len(plan.substitutions) == 4
        for sub in plan.substitutions:
            assert sub.risk_after == pytest.approx(sub.risk_before - 0.2)
            assert sub.chosen in [c.symbol for c in sub.candidates]

    def test_tie_break_on_symbol_id(self):
        # b and c are emitted identically, so their utility losses tie
        p = HmmParams([0.5, 0.5], [[0.8, 0.2], [0.3, 0.7]],
                      [[1.0, 0.0, 0.0], [0.0, 0.5, 0.5]], symbols=("a", "c", "b"))
        _, plan = obfuscate_sequence(p, seq(0, 0, 0), SENS0, 0.3, ObfuscationPolicy(saturation=5))
        assert {s.chosen_name for s in plan.substitutions} == {"b"}

    def test_unmet_threshold_flag(self):
        p = HmmParams([1.0], [[1.0]], [[0.5, 0.5]])
        out, plan = obfuscate_sequence(p, seq(0, 1, 0, 1, 0), SensitiveStateSet((0,)), 0.2)
        assert plan.unmet_threshold and plan.residual_risk == plan.original_risk == 1.0

    def test_validates_threshold(self, split_model):
        with pytest.raises(ValueError):
            obfuscate_sequence(split_model, seq(0), SENS0, 0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.9))
    def test_contract(self, seed, threshold):
        rng = np.random.default_rng(seed)
        p = random_model(rng, 3, 5)
        s = seq(*rng.integers(0, 5, 10))
        out, plan = obfuscate_sequence(p, s, SensitiveStateSet((0,)), threshold,
                                       ObfuscationPolicy(saturation=2))
        assert plan.residual_risk <= plan.original_risk
        assert plan.residual_risk <= threshold or plan.unmet_threshold
        np.testing.assert_array_equal(apply_plan(s, plan).obs, out.obs)
        for sub in plan.substitutions:
            assert 0 <= sub.utility_loss <= 1
        out2, plan2 = obfuscate_sequence(p, s, SensitiveStateSet((0,)), threshold,
                                         ObfuscationPolicy(saturation=2))
        assert plan2.records() == plan.records()
