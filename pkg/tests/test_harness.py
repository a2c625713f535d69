import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfi import harness, io
from gfi.numerics import DomainError


def _spec(**kw):
    return harness.StudySpec.from_dict(kw)


def test_spec_defaults_and_validation():
    s = _spec(family="mvn")
    assert s.replicates == 200 and s.data_size == 100 and 0.95 in s.levels
    assert _spec(family="binom_np").replicates == 50
    assert _spec(family="ranef").levels == [0.8, 0.9, 0.95, 0.99]
    with pytest.raises(DomainError):
        _spec(family="poisson")
    with pytest.raises(DomainError):
        _spec(family="mvn", replicates=0)
    with pytest.raises(DomainError):
        _spec(family="mvn", levels=[0.5, 1.0])
    with pytest.raises(DomainError):
        _spec(family="mvn", replicate=3)
    d = _spec(family="binom_p", seed=4).to_dict()
    assert harness.StudySpec.from_dict(d) == _spec(family="binom_p", seed=4)


def test_binom_p_study_records_and_monotone_curves():
    spec = _spec(family="binom_p", replicates=40, draws=400, seed=3)
    res = harness.run_study(spec)
    cells = {r.cell for r in res.records}
    assert len(cells) == 3
    # one record per (replicate, level, metric, cell)
    assert len(res.records) == 40 * len(spec.levels) * 2 * 3
    for cell in cells:
        for conv in ("geometric", "arithmetic"):
            cov = [res.coverage(cell, conv, lv) for lv in spec.levels]
            assert np.all(np.diff(cov) >= 0)


def test_study_is_pure_function_of_spec(monkeypatch):
    spec = _spec(family="binom_n", replicates=6, draws=200, truth={"n": 10, "p": [0.5, 0.9]}, seed=11)
    monkeypatch.setenv("GFI_THREADS", "1")
    a = harness.run_study(spec)
    monkeypatch.setenv("GFI_THREADS", "2")
    b = harness.run_study(spec)
    assert a.record_rows() == b.record_rows()
    assert a.extras == b.extras
    c = harness.run_study(_spec(family="binom_n", replicates=6, draws=200, truth={"n": 10, "p": [0.5, 0.9]}, seed=12))
    assert a.record_rows() != c.record_rows()


def test_binom_n_high_p_is_certain():
    spec = _spec(family="binom_n", replicates=20, draws=200, truth={"n": 10, "p": [0.99]})
    res = harness.run_study(spec)
    for lv in spec.levels:
        assert res.coverage(metric="fiducial", level=lv) == 1.0
        assert res.coverage(metric="bayes", level=lv) == 1.0
    assert all(r.summary == 10 for r in res.records)
    assert len(res.extras) == 20


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("GFI_THREADS", "1")
    assert harness.worker_count() == 1
    monkeypatch.setenv("GFI_THREADS", "100000")
    assert harness.worker_count() >= 1
    monkeypatch.setenv("GFI_THREADS", "many")
    with pytest.raises(DomainError):
        harness.worker_count()


def test_mvn_study_small():
    spec = _spec(family="mvn", replicates=2, iterations=300, burn_in=100, chains=2, levels=[0.5, 0.95])
    res = harness.run_study(spec)
    metrics = {r.metric for r in res.records}
    assert metrics == {"fm", "stein", "spectral", "frobenius", "logdet", "spectral_norm",
                       "frobenius_norm", "mu_euclidean"}
    assert len(res.records) == 2 * 2 * 8
    for m in metrics:
        for r in range(2):
            small = [x for x in res.records if x.metric == m and x.replicate == r and x.level == 0.5][0]
            big = [x for x in res.records if x.metric == m and x.replicate == r and x.level == 0.95][0]
            assert big.summary >= small.summary
            assert big.contained >= small.contained


def test_ranef_study_small_and_eta_split():
    spec = _spec(family="ranef", replicates=3, iterations=400, burn_in=100,
                 truth={"patterns": [7], "pairs": [[0.5, 2.0], [2.0, 0.5]]})
    res = harness.run_study(spec)
    cells = sorted({r.cell for r in res.records})
    assert cells == ["pattern=7,sa2=0.5,se2=2", "pattern=7,sa2=2,se2=0.5"]
    low, high = harness.eta_split(res, "sigma_e2", 0.95)
    assert 0 <= low <= 1 and 0 <= high <= 1


def test_binom_np_study_small():
    spec = _spec(family="binom_np", replicates=1, iterations=30, burn_in=10,
                 truth={"n": [15], "p": [0.1, 0.9]})
    res = harness.run_study(spec)
    metrics = {r.metric for r in res.records}
    assert metrics == {"plausibility", "belief", "mu_marginal", "n_marginal", "tail_fraction"}
    cells = {r.cell for r in res.records}
    assert cells == {"n=15,p=0.1,m=100", "n=15,p=0.9,m=100"}


def test_summary_rows_match_coverage():
    spec = _spec(family="binom_p", replicates=10, draws=100, truth={"n": 10, "p": [0.5]})
    res = harness.run_study(spec)
    rows = harness.summarize(res.records)
    for fam, cell, metric, lv, reps, cov, _ in rows:
        assert reps == 10
        assert cov == res.coverage(cell, metric, lv)


@settings(max_examples=15)
@given(st.lists(st.tuples(st.integers(0, 5), st.floats(-1e6, 1e6, allow_nan=False), st.booleans()),
                min_size=1, max_size=20), st.sampled_from(["csv", "json"]))
def test_rows_round_trip(rows, fmt):
    header = ["replicate", "summary", "contained"]
    data = [[a, b, int(c)] for a, b, c in rows]
    h, back = io.parse_rows(io.format_rows(header, data, fmt), fmt)
    assert h == header
    assert back == data


def test_records_round_trip_through_files(tmp_path):
    spec = _spec(family="binom_p", replicates=3, draws=50, truth={"n": 10, "p": [0.3]})
    res = harness.run_study(spec)
    for fmt in ("csv", "json"):
        path = tmp_path / f"rec.{fmt}"
        io.write_rows(path, harness.RECORD_FIELDS, res.record_rows(), fmt)
        h, rows = io.parse_rows(path.read_text(), fmt)
        assert h == harness.RECORD_FIELDS
        assert rows == res.record_rows()


def test_readers(tmp_path):
    p = tmp_path / "counts.csv"
    p.write_text("y\n1\n4\n0\n")
    assert io.read_counts(p).tolist() == [1, 4, 0]
    p.write_text("y\n1.5\n")
    with pytest.raises(DomainError):
        io.read_counts(p)
    p = tmp_path / "grouped.csv"
    p.write_text("y,group\n1.0,2\n2.0,1\n3.0,2\n")
    y, sizes = io.read_grouped(p)
    assert y.tolist() == [2.0, 1.0, 3.0] and sizes == (1, 2)
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1\n")
    with pytest.raises(DomainError):
        io.read_table(p)
