import pytest

from rwrelab.acceptance import (
    CRITERIA,
    SUITES,
    CriterionResult,
    Verifier,
    corrupted_chain,
    random_chains,
    run_criterion,
    verify,
)
from rwrelab.errors import MalformedChainError, UsageError


@pytest.fixture
def verifier(tmp_path):
    return Verifier(tmp_path, quick=True)


def _run(verifier, number):
    name, fn = CRITERIA[number]
    return run_criterion(verifier, number, name, fn)


class TestFixtures:
    def test_random_chains_are_ergodic(self):
        chains = random_chains(20)
        assert len(chains) == 20
        assert all(c.ergodic for c in chains)
        assert all(2 <= c.n_states <= 16 for c in chains)

    def test_random_chains_are_reproducible(self):
        a, b = random_chains(3), random_chains(3)
        assert all((x.transition == y.transition).all() for x, y in zip(a, b))

    def test_corrupted_chain_fails_check(self):
        with pytest.raises(MalformedChainError, match="row 0"):
            corrupted_chain().check()


class TestCriteria:
    def test_resolvent_exactness(self, verifier):
        result = _run(verifier, 1)
        assert result.passed, result.checks
        assert result.checks[-1].value == "11"

    def test_resolvent_exactness_flags_corrupted_chain(self, tmp_path):
        verifier = Verifier(tmp_path, quick=True, extra_chains=[corrupted_chain()])
        result = _run(verifier, 1)
        assert not result.passed
        assert [c.statistic for c in result.checks if not c.passed] == ["chain 11"]

    def test_k_geometry(self, verifier):
        assert _run(verifier, 8).passed

    def test_small_set(self, verifier):
        result = _run(verifier, 9)
        assert result.passed
        assert result.checks[0].value == "(2, 0.5)"

    def test_quenched_exponent(self, verifier):
        assert _run(verifier, 5).passed

    def test_lil_envelope_quick(self, verifier):
        result = _run(verifier, 6)
        assert result.passed, result.checks
        assert len(result.checks) == 4

    def test_lil_envelope_full_size(self, tmp_path):
        # 200 replicas up to n = 1e6 on both models, as `verify lil-envelope` runs it
        result = _run(Verifier(tmp_path, workers=4), 6)
        assert result.passed, result.checks
        caps = [c.threshold for c in result.checks if c.statistic.endswith("max running max")]
        assert caps == ["<= 2.5", "<= 2.5"]
        assert (tmp_path / "verify").is_dir()

    def test_determinism(self, verifier, tmp_path):
        result = _run(verifier, 10)
        assert result.passed
        assert (tmp_path / "verify" / "determinism" / "workers-8").is_dir()

    def test_errors_are_captured(self, verifier):
        def broken(v, r):
            raise UsageError("no such model")

        result = run_criterion(verifier, 99, "broken", broken)
        assert not result.passed
        assert result.error == "no such model"

    def test_empty_criterion_does_not_pass(self):
        assert not CriterionResult(1, "nothing").passed


class TestVerify:
    def test_unknown_suite(self, tmp_path):
        with pytest.raises(UsageError, match="unknown suite"):
            verify("everything", tmp_path)

    def test_suites_cover_all_criteria(self):
        assert sorted(SUITES["all"]) == sorted(CRITERIA)
        assert set(SUITES["oracles"]) <= set(CRITERIA)

    def test_report_document(self, tmp_path):
        report = verify("determinism", tmp_path, quick=True)
        doc = report.to_dict()
        assert doc["suite"] == "determinism"
        assert doc["quick"] is True
        assert doc["passed"] == report.passed
        assert [c["number"] for c in doc["criteria"]] == [10]
        assert {"statistic", "value", "threshold", "passed"} <= set(doc["criteria"][0]["checks"][0])
