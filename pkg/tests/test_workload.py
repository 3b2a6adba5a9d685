import numpy as np
import pytest
from scipy import stats

from ragsim.workload import (
    PRESETS,
    CorpusSpec,
    TraceSpec,
    draw_doc_sequences,
    generate_corpus,
    generate_trace,
    read_corpus,
    read_trace,
    write_corpus,
    write_trace,
)


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed]))


class TestCorpus:
    def test_deterministic_for_seed(self):
        spec = PRESETS["mmlu"]
        a = generate_corpus(spec, rng_for(3))
        b = generate_corpus(spec, rng_for(3))
        assert np.array_equal(a.sizes, b.sizes)
        assert np.array_equal(a.weights, b.weights)

    def test_weights_normalized_and_lengths_positive(self):
        corpus = generate_corpus(PRESETS["mmlu"], rng_for(0))
        assert corpus.weights.sum() == pytest.approx(1.0)
        assert (corpus.sizes >= 1).all()

    def test_mean_length_near_spec(self):
        spec = CorpusSpec(num_docs=20000, length_mean=600.0, length_sigma=0.5)
        corpus = generate_corpus(spec, rng_for(1))
        assert corpus.sizes.mean() == pytest.approx(600.0, rel=0.05)

    def test_uniform_popularity_when_exponent_zero(self):
        spec = CorpusSpec(num_docs=1000, zipf_s=0.0)
        corpus = generate_corpus(spec, rng_for(0))
        docs = draw_doc_sequences(rng_for(1), corpus.weights, 20000, 1)
        top = int(1000 * 0.03)
        share = (docs < top).mean()
        assert share == pytest.approx(0.03, abs=0.01)


class TestSkewCalibration:
    def test_mmlu_preset_top3pct_share(self):
        """The flagship skew statistic: top 3% of documents take ~60% of draws."""
        spec = PRESETS["mmlu"]
        corpus = generate_corpus(spec, rng_for(0))
        n_requests = 50000  # 100k draws at k=2
        docs = draw_doc_sequences(rng_for(5), corpus.weights, n_requests, 2)
        top = int(spec.num_docs * 0.03)
        share = (docs < top).mean()
        assert 0.55 <= share <= 0.65

    def test_nq_preset_less_skewed(self):
        mmlu = generate_corpus(PRESETS["mmlu"], rng_for(0))
        nq = generate_corpus(PRESETS["nq"], rng_for(0))
        top = int(10000 * 0.03)
        assert nq.weights[:top].sum() < mmlu.weights[:top].sum()


class TestDrawDocSequences:
    def test_no_repeats_within_request(self):
        corpus = generate_corpus(CorpusSpec(num_docs=100, zipf_s=1.2), rng_for(0))
        docs = draw_doc_sequences(rng_for(2), corpus.weights, 5000, 3)
        for row in docs:
            assert len(set(row.tolist())) == 3

    def test_draw_frequencies_match_weights(self):
        corpus = generate_corpus(CorpusSpec(num_docs=50, zipf_s=0.8), rng_for(0))
        draws = draw_doc_sequences(rng_for(3), corpus.weights, 200000, 1).ravel()
        observed = np.bincount(draws, minlength=50)
        expected = corpus.weights * len(draws)
        chi2 = ((observed - expected) ** 2 / expected).sum()
        # 49 dof: reject only beyond the 0.999 quantile
        assert chi2 < stats.chi2.ppf(0.999, df=49)

    def test_k_larger_than_corpus_rejected(self):
        corpus = generate_corpus(CorpusSpec(num_docs=3, zipf_s=0.5), rng_for(0))
        with pytest.raises(ValueError):
            draw_doc_sequences(rng_for(0), corpus.weights, 10, 4)


class TestTrace:
    def test_poisson_arrival_count(self):
        corpus = generate_corpus(CorpusSpec(num_docs=100), rng_for(0))
        spec = TraceSpec(duration_s=3600.0, arrival_rate=1.0, seed=0)
        trace = generate_trace(corpus, spec, rng_for(0))
        # 3600 expected, sigma = 60: accept a 3-sigma band
        assert 3600 - 180 <= len(trace) <= 3600 + 180

    def test_interarrivals_exponential(self):
        corpus = generate_corpus(CorpusSpec(num_docs=100), rng_for(0))
        spec = TraceSpec(duration_s=3600.0, arrival_rate=1.0, seed=0)
        trace = generate_trace(corpus, spec, rng_for(0))
        arrivals = np.array([r.arrival_ms for r in trace]) / 1000.0
        gaps = np.diff(arrivals)
        _, pvalue = stats.kstest(gaps, "expon", args=(0, 1.0))
        assert pvalue > 0.01

    def test_k1_sequences(self):
        corpus = generate_corpus(CorpusSpec(num_docs=100), rng_for(0))
        trace = generate_trace(corpus, TraceSpec(duration_s=60, k=1, seed=0), rng_for(0))
        assert all(len(r.doc_sequence) == 1 for r in trace)

    def test_all_doc_ids_exist(self):
        corpus = generate_corpus(CorpusSpec(num_docs=77), rng_for(0))
        trace = generate_trace(corpus, TraceSpec(duration_s=120, seed=0), rng_for(0))
        for r in trace:
            assert all(0 <= d < 77 for d in r.doc_sequence)

    def test_output_length_distribution(self):
        corpus = generate_corpus(CorpusSpec(num_docs=100), rng_for(0))
        trace = generate_trace(
            corpus, TraceSpec(duration_s=7200.0, arrival_rate=2.0, seed=0), rng_for(0)
        )
        outputs = np.array([r.output_tokens for r in trace])
        assert outputs.mean() == pytest.approx(6.0, rel=0.1)
        assert np.percentile(outputs, 99) <= 32
        assert (outputs >= 1).all()

    def test_arrivals_sorted(self):
        corpus = generate_corpus(CorpusSpec(num_docs=100), rng_for(0))
        trace = generate_trace(corpus, TraceSpec(duration_s=300, seed=0), rng_for(0))
        arrivals = [r.arrival_ms for r in trace]
        assert arrivals == sorted(arrivals)


class TestFileFormats:
    def test_trace_round_trip(self, tmp_path):
        corpus = generate_corpus(CorpusSpec(num_docs=40), rng_for(0))
        trace = generate_trace(corpus, TraceSpec(duration_s=60, seed=0), rng_for(0))
        path = tmp_path / "trace.jsonl"
        write_trace(trace, str(path))
        assert read_trace(str(path)) == trace

    def test_corpus_round_trip(self, tmp_path):
        corpus = generate_corpus(CorpusSpec(num_docs=40), rng_for(0))
        path = tmp_path / "corpus.csv"
        write_corpus(corpus, str(path))
        loaded = read_corpus(str(path))
        assert np.array_equal(loaded.sizes, corpus.sizes)
        assert np.allclose(loaded.weights, corpus.weights, rtol=0, atol=0)

    def test_corpus_rejects_gaps(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("doc_id,token_size,weight\n0,10,0.5\n2,10,0.5\n")
        with pytest.raises(ValueError):
            read_corpus(str(path))
