"""Stream derivation, aggregation, and the replication harness."""

import json
import pathlib

import numpy as np
import pytest

from diffbandit.harness import (
    BLOCK_SIZE,
    Aggregate,
    StreamKey,
    default_workers,
    derive_stream,
    run_replications,
    stream_key_words,
)

DATA = pathlib.Path(__file__).parent / "data"

MASK64 = (1 << 64) - 1


def _splitmix(z):
    # independent re-derivation of the finalizer used for key absorption
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def test_key_words_match_manual_derivation():
    key = StreamKey(12345, 67, 890)
    h = _splitmix(12345 ^ 0x9E3779B97F4A7C15)
    h = _splitmix(h ^ _splitmix(67 ^ 0xC2B2AE3D27D4EB4F))
    h = _splitmix(h ^ _splitmix(890 ^ 0x165667B19E3779F9))
    expected = (_splitmix(h ^ 0xD6E8FEB86659FD93), _splitmix(h ^ 0x2545F4914F6CDD1D))
    assert key.words() == expected


def test_key_words_distinct_across_fields():
    base = StreamKey(1, 2, 3).words()
    assert StreamKey(2, 2, 3).words() != base
    assert StreamKey(1, 3, 3).words() != base
    assert StreamKey(1, 2, 4).words() != base
    # permuting field values must not alias
    assert StreamKey(2, 1, 3).words() != StreamKey(1, 2, 3).words()


def test_key_validation():
    with pytest.raises(ValueError):
        StreamKey(0, -1, 0)
    with pytest.raises(ValueError):
        StreamKey(0, 0, -1)


def test_golden_stream_vector():
    """Stream outputs frozen at a fixed key; any drift breaks replays."""
    golden = json.loads((DATA / "golden_streams.json").read_text())
    key = StreamKey(*golden["key"])
    gen = derive_stream(key)
    words = gen.bit_generator.random_raw(len(golden["raw_words"])).tolist()
    assert words == golden["raw_words"]
    gen = derive_stream(key)
    normals = gen.standard_normal(len(golden["normals"]))
    np.testing.assert_array_equal(normals, np.array(golden["normals"]))
    assert list(key.words()) == golden["key_words"]


def test_chunked_normals_match_bulk():
    key = StreamKey(7, 11, 13)
    bulk = derive_stream(key).standard_normal(1000)
    gen = derive_stream(key)
    parts = [gen.standard_normal(n) for n in (1, 7, 92, 400, 500)]
    np.testing.assert_array_equal(np.concatenate(parts), bulk)


def test_vectorized_key_words_match_scalar():
    reps = np.array([0, 1, 2, 5, 1000, 2**40], dtype=np.uint64)
    words = stream_key_words(99, reps, 3)
    for i, rep in enumerate(reps):
        k0, k1 = StreamKey(99, int(rep), 3).words()
        assert (int(words[i, 0]), int(words[i, 1])) == (k0, k1)


def test_streams_are_statistically_disjoint():
    a = derive_stream(StreamKey(0, 0, 0)).standard_normal(4000)
    b = derive_stream(StreamKey(0, 1, 0)).standard_normal(4000)
    c = derive_stream(StreamKey(0, 0, 1)).standard_normal(4000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
    assert abs(np.corrcoef(a, c)[0, 1]) < 0.05


# ---------------------------------------------------------------------------
# Aggregate


def test_aggregate_matches_numpy_moments():
    rng = np.random.default_rng(0)
    v = rng.normal(3.0, 2.0, size=1000)
    agg = Aggregate.from_block(v)
    assert agg.count == 1000
    assert agg.mean == pytest.approx(v.mean(), rel=1e-13)
    assert agg.variance == pytest.approx(v.var(ddof=1), rel=1e-12)
    assert agg.minimum == v.min() and agg.maximum == v.max()
    lo, hi = agg.ci95()
    assert lo < v.mean() < hi


def test_aggregate_merge_equals_whole():
    rng = np.random.default_rng(1)
    v = rng.exponential(size=997)
    whole = Aggregate.from_block(v)
    merged = Aggregate()
    for chunk in np.array_split(v, 7):
        merged = merged.merge(Aggregate.from_block(chunk))
    assert merged.count == whole.count
    assert merged.mean == pytest.approx(whole.mean, rel=1e-13)
    assert merged.m2 == pytest.approx(whole.m2, rel=1e-10)
    assert merged.minimum == whole.minimum
    assert merged.maximum == whole.maximum


def test_aggregate_merge_commutes_and_ignores_empty():
    a = Aggregate.from_block([1.0, 2.0])
    b = Aggregate.from_block([3.0, 4.0, 5.0])
    ab, ba = a.merge(b), b.merge(a)
    assert ab.mean == pytest.approx(ba.mean, abs=1e-15)
    assert ab.m2 == pytest.approx(ba.m2, abs=1e-12)
    empty = Aggregate()
    assert a.merge(empty).mean == a.mean
    assert empty.merge(a).count == a.count


def test_aggregate_update_matches_block():
    v = [1.5, -2.0, 0.25, 9.0]
    agg = Aggregate()
    for x in v:
        agg.update(x)
    block = Aggregate.from_block(v)
    assert agg.mean == pytest.approx(block.mean, rel=1e-15)
    assert agg.m2 == pytest.approx(block.m2, rel=1e-12)


def test_aggregate_retained_samples_sorted_by_rep():
    a = Aggregate.from_block([10.0, 20.0], rep_ids=[5, 1], keep_samples=True)
    b = Aggregate.from_block([30.0], rep_ids=[3], keep_samples=True)
    m = a.merge(b)
    assert m.sample_ids.tolist() == [1, 3, 5]
    assert m.sample_values.tolist() == [20.0, 30.0, 10.0]
    with pytest.raises(ValueError):
        Aggregate.from_block([1.0], keep_samples=True)


def test_aggregate_degenerate():
    agg = Aggregate.from_block([2.0])
    assert np.isnan(agg.variance) and np.isnan(agg.stderr)
    assert Aggregate.from_block([]).count == 0


# ---------------------------------------------------------------------------
# run_replications


class _SquareJob:
    """Toy job: statistic is a deterministic function of the rep id."""

    retained = ("value",)

    def run_block(self, master_seed, lo, hi):
        ids = np.arange(lo, hi, dtype=float)
        return {"value": ids**2 + master_seed, "flat": np.ones(hi - lo)}


def test_run_replications_exact_values():
    out = run_replications(_SquareJob(), 10, 3, workers=1, block_size=4)
    agg = out["value"]
    expected = np.arange(10.0) ** 2 + 3
    assert agg.count == 10
    assert agg.mean == pytest.approx(expected.mean(), rel=1e-14)
    assert agg.sample_values.tolist() == expected.tolist()
    assert out["flat"].keep_samples is False


def test_run_replications_scheduling_independence():
    base = run_replications(_SquareJob(), 103, 0, workers=1, block_size=8)
    for workers, block in ((2, 8), (5, 8), (3, 7)):
        other = run_replications(_SquareJob(), 103, 0, workers=workers,
                                 block_size=block)
        # same block size => bitwise identical; different block size =>
        # identical samples, moments equal to rounding
        assert other["value"].sample_values.tolist() == base["value"].sample_values.tolist()
        assert other["value"].mean == pytest.approx(base["value"].mean, rel=1e-12)
        if block == 8:
            assert other["value"].mean == base["value"].mean
            assert other["value"].m2 == base["value"].m2


def test_run_replications_uses_job_block_size():
    calls = []

    class Job:
        retained = ()
        block_size = 5

        def run_block(self, seed, lo, hi):
            calls.append((lo, hi))
            return {"x": np.zeros(hi - lo)}

    run_replications(Job(), 12, 0, workers=1)
    assert calls == [(0, 5), (5, 10), (10, 12)]


def test_run_replications_rejects_empty():
    with pytest.raises(ValueError):
        run_replications(_SquareJob(), 0, 0)


def test_default_workers_env_override(monkeypatch):
    monkeypatch.setenv("DIFFBANDIT_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.delenv("DIFFBANDIT_WORKERS")
    assert default_workers() >= 1


def test_block_size_constant_is_fixed():
    # scheduling independence relies on a stable default partition
    assert BLOCK_SIZE == 4096
