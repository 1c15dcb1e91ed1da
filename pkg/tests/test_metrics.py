import numpy as np
import pytest

from redimnet import metrics as M
from redimnet.errors import ConfigError, FormatError, InputError, NumericError

import oracles


def scoreset(tar, non):
    return M.ScoreSet([1] * len(tar) + [0] * len(non), list(tar) + list(non))


def test_cosine_examples(rng):
    v = rng.standard_normal(5)
    assert M.cosine_score(v, v) == 1.0
    assert M.cosine_score([1, 0], [0, 3]) == 0.0
    assert M.cosine_score(v, -v) == -1.0
    with pytest.raises(InputError):
        M.cosine_score([0, 0], [1, 0])


def test_eer_examples():
    assert M.eer(scoreset([0.9, 0.8], [0.1, 0.2])) == 0.0
    assert abs(M.eer(scoreset([0.8, 0.6, 0.4], [0.5, 0.3, 0.1])) - 1 / 3) < 1e-15


def test_eer_swap_symmetry(rng):
    tar, non = rng.normal(1, 1, 30), rng.normal(0, 1, 40)
    assert abs(M.eer(scoreset(tar, non)) - M.eer(scoreset(-non, -tar))) < 1e-12


def test_min_dcf_examples():
    assert M.min_dcf(scoreset([0.9, 0.8], [0.1, 0.2])) == 0.0
    assert abs(M.min_dcf(scoreset([0.8, 0.6, 0.4], [0.5, 0.3, 0.1])) - 1 / 3) < 1e-12


def test_min_dcf_bounded_by_one(rng):
    for _ in range(50):
        labels = np.repeat([0, 1], 20)
        assert M.min_dcf(rng.standard_normal(40), labels) <= 1 + 1e-9


def test_single_class_is_input_error():
    with pytest.raises(InputError):
        M.eer(M.ScoreSet([1, 1], [0.1, 0.2]))
    with pytest.raises(InputError):
        M.min_dcf(M.ScoreSet([0, 0], [0.1, 0.2]))
    with pytest.raises(InputError):
        M.ScoreSet([1, 2], [0.1, 0.2])


def test_metrics_match_oracle_small(rng):
    for _ in range(100):
        tar = np.round(rng.normal(1, 1, rng.integers(1, 15)), 1)
        non = np.round(rng.normal(0, 1, rng.integers(1, 15)), 1)
        ref, _ = oracles.eer(tar, non)
        assert abs(M.eer(scoreset(tar, non)) - ref) < 1e-12
        assert M.min_dcf(scoreset(tar, non)) == oracles.min_dcf(tar, non)


# -- AS-Norm ------------------------------------------------------------------

def test_asnorm_hand_example():
    # two cohort scores with mean 0.3 and sample std 0.1 on both sides
    cohort = np.array([0.3 - 0.1 / np.sqrt(2), 0.3 + 0.1 / np.sqrt(2)])
    out = M.asnorm_scores([0.5], [cohort], [cohort], topk=2)
    assert abs(out[0] - 2.0) < 1e-12


def test_asnorm_matches_oracle(rng):
    raw = rng.uniform(-1, 1, 20)
    ce, ct = rng.uniform(-1, 1, (20, 50)), rng.uniform(-1, 1, (20, 50))
    np.testing.assert_allclose(M.asnorm_scores(raw, ce, ct, 10), oracles.asnorm(raw, ce, ct, 10), rtol=1e-12)


def test_asnorm_full_cohort_is_plain_snorm(rng):
    raw = rng.uniform(-1, 1, 5)
    ce, ct = rng.uniform(-1, 1, (5, 12)), rng.uniform(-1, 1, (5, 12))
    z = 0.5 * ((raw - ce.mean(1)) / ce.std(1, ddof=1) + (raw - ct.mean(1)) / ct.std(1, ddof=1))
    np.testing.assert_allclose(M.asnorm_scores(raw, ce, ct, 12), z, rtol=1e-12)


def test_asnorm_shared_stats_keep_ranking(rng):
    raw = rng.uniform(-1, 1, 30)
    row = rng.uniform(-1, 1, 40)
    out = M.asnorm_scores(raw, np.tile(row, (30, 1)), np.tile(row, (30, 1)), 10)
    assert np.array_equal(np.argsort(out), np.argsort(raw))


def test_asnorm_errors():
    with pytest.raises(NumericError, match="enroll"):
        M.asnorm_scores([0.5], [[0.3, 0.3, 0.3]], [[0.1, 0.2, 0.3]], 3)
    with pytest.raises(NumericError, match="test"):
        M.asnorm_scores([0.5], [[0.1, 0.2, 0.3]], [[0.3, 0.3, 0.3]], 3)
    with pytest.raises(ConfigError):
        M.asnorm_scores([0.5], [[0.1, 0.2]], [[0.1, 0.2]], 3)
    with pytest.raises(ConfigError):
        M.asnorm_scores([0.5], [[0.1, 0.2]], [[0.1, 0.2]], 1)


def test_score_trials_with_cohort(rng):
    emb = {f"u{i}": rng.standard_normal(8) for i in range(6)}
    trials = [M.Trial(1, "u0", "u1"), M.Trial(0, "u2", "u3"), M.Trial(1, "u4", "u4")]
    cohort = rng.standard_normal((20, 8))
    ss = M.score_trials(trials, emb, emb, cohort, topk=5)
    assert ss.scores[2] == 1.0
    e = np.array([emb[t.enroll] for t in trials])
    t = np.array([emb[t.test] for t in trials])
    ref = oracles.asnorm(ss.scores, M.cosine_matrix(e, cohort), M.cosine_matrix(t, cohort), 5)
    np.testing.assert_allclose(ss.normalized, ref, rtol=1e-12)


def test_missing_id_fails_whole_run(rng):
    emb = {"a": rng.standard_normal(4)}
    with pytest.raises(InputError, match="'b'"):
        M.score_trials([M.Trial(1, "a", "b")], emb, emb)


# -- text formats -------------------------------------------------------------

def test_trial_and_score_round_trip(tmp_path):
    trials = [M.Trial(1, "a", "b"), M.Trial(0, "a", "c")]
    M.write_trials(tmp_path / "t.txt", trials)
    assert M.read_trials(tmp_path / "t.txt") == trials
    M.write_scores(tmp_path / "s.txt", trials, [0.123456789123, -0.5])
    assert (tmp_path / "s.txt").read_text() == "a b 0.123456789\na c -0.5\n"
    assert M.read_scores(tmp_path / "s.txt")[0] == ("a", "b", 0.123456789)


@pytest.mark.parametrize("line", ["2 a b", "1 a", "x a b"])
def test_bad_trial_lines(tmp_path, line):
    (tmp_path / "t.txt").write_text(line + "\n")
    with pytest.raises(FormatError, match=":1:"):
        M.read_trials(tmp_path / "t.txt")


def test_bad_score_lines(tmp_path):
    (tmp_path / "s.txt").write_text("a b nope\n")
    with pytest.raises(FormatError):
        M.read_scores(tmp_path / "s.txt")
