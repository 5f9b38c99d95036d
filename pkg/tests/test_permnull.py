"""Tests for the sign-flip permutation null distribution of cluster extent."""

import json
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from permfdr.clustering import Connectivity, extract_clusters
from permfdr.permnull import (
    ExtentNullDistribution,
    PermutationConfig,
    analyze_contrast,
    build_null,
    extent_histogram_of,
    null_pvalue,
    pool_normalized_histograms,
)
from permfdr.stats import one_sample_tmap, rng_sign_vector
from permfdr.synth import SynthConfig, generate_stack
from permfdr.volume import stack_from_arrays

from oracles import pool_histograms_exact


def make_dist(mass, realizations, **over):
    fields = dict(
        mass=mass,
        realizations=realizations,
        zero_cluster_fraction=mass.get(0, 0.0),
        cdt_p=0.01,
        t_threshold=2.5,
        df=19,
        connectivity=Connectivity.CORNERS26,
        master_seed=42,
    )
    fields.update(over)
    return ExtentNullDistribution(**fields)


def noise_stack(seed, dims=(6, 6, 6), n=8):
    rng = np.random.default_rng(seed)
    return stack_from_arrays([rng.standard_normal(dims) for _ in range(n)])


class TestConfig:
    def test_defaults(self):
        cfg = PermutationConfig(master_seed=1)
        assert cfg.realizations == 5000
        assert cfg.cdt_p == 0.001
        assert cfg.connectivity is Connectivity.CORNERS26
        assert cfg.alpha_fdr == 0.05

    def test_connectivity_coerced(self):
        cfg = PermutationConfig(master_seed=1, connectivity="6")
        assert cfg.connectivity is Connectivity.FACES6

    def test_validation(self):
        with pytest.raises(ValueError):
            PermutationConfig(master_seed=1, realizations=0)
        with pytest.raises(ValueError):
            PermutationConfig(master_seed=1, cdt_p=0.5)
        with pytest.raises(ValueError):
            PermutationConfig(master_seed=1, cdt_p=0.0)
        with pytest.raises(ValueError):
            PermutationConfig(master_seed=1, alpha_fdr=1.0)


class TestPooling:
    def test_worked_example(self):
        # realizations: no clusters; extents (2,2,3); extent (5)
        mass, zero_frac = pool_normalized_histograms([[], [2, 2, 3], [5]])
        assert zero_frac == pytest.approx(1.0 / 3.0, abs=0)
        expected = {
            0: Fraction(1, 3),
            2: Fraction(2, 9),
            3: Fraction(1, 9),
            5: Fraction(1, 3),
        }
        assert set(mass) == set(expected)
        for k, v in expected.items():
            assert mass[k] == float(v)  # exact rational, converted once

    def test_all_empty(self):
        mass, zero_frac = pool_normalized_histograms([[], [], [], []])
        assert mass == {0: 1.0}
        assert zero_frac == 1.0

    def test_single_realization(self):
        mass, zero_frac = pool_normalized_histograms([[7]])
        assert mass == {7: 1.0}
        assert zero_frac == 0.0

    def test_matches_exact_oracle(self):
        rng = np.random.default_rng(0)
        lists = []
        for _ in range(500):
            k = int(rng.integers(0, 6))
            lists.append(list(rng.integers(1, 30, size=k)))
        mass, _ = pool_normalized_histograms(lists)
        expected = pool_histograms_exact(lists)
        assert set(mass) == set(expected)
        for k, v in expected.items():
            assert mass[k] == float(v)

    def test_mass_sums_to_one(self):
        rng = np.random.default_rng(1)
        lists = [list(rng.integers(1, 50, size=int(rng.integers(0, 8)))) for _ in range(100000)]
        mass, _ = pool_normalized_histograms(lists)
        assert sum(mass.values()) == pytest.approx(1.0, abs=1e-9)

    def test_order_independent(self):
        rng = np.random.default_rng(2)
        lists = [list(rng.integers(1, 10, size=int(rng.integers(0, 4)))) for _ in range(200)]
        a, _ = pool_normalized_histograms(lists)
        b, _ = pool_normalized_histograms(list(reversed(lists)))
        assert a == b  # exact rational average is order-free

    def test_each_realization_weighs_equally(self):
        # one realization with many clusters still contributes mass 1/B
        mass, _ = pool_normalized_histograms([[1] * 100, [2]])
        assert mass[1] == pytest.approx(0.5, abs=0)
        assert mass[2] == pytest.approx(0.5, abs=0)

    def test_no_realizations_rejected(self):
        with pytest.raises(ValueError):
            pool_normalized_histograms([])

    def test_bad_extent_rejected(self):
        with pytest.raises(ValueError):
            extent_histogram_of([3, 0])


class TestNullPValue:
    def test_tail_sum(self):
        dist = make_dist({0: 0.5, 2: 0.3, 5: 0.2}, realizations=999)
        assert null_pvalue(dist, 2) == pytest.approx(0.5, abs=1e-15)
        assert null_pvalue(dist, 3) == pytest.approx(0.2, abs=1e-15)
        assert null_pvalue(dist, 5) == pytest.approx(0.2, abs=1e-15)

    def test_clamp_floor(self):
        dist = make_dist({0: 0.5, 2: 0.3, 5: 0.2}, realizations=3)
        # raw tail at extent 6 is 0, so the floor 1/(B+1) applies
        assert null_pvalue(dist, 6) == pytest.approx(0.25, abs=0)

    def test_degenerate_null(self):
        dist = make_dist({0: 1.0}, realizations=5000)
        assert null_pvalue(dist, 1) == pytest.approx(1.0 / 5001.0, abs=0)

    def test_extent_one_complements_zero_mass(self):
        dist = make_dist({0: 0.25, 1: 0.25, 4: 0.5}, realizations=1000)
        assert null_pvalue(dist, 1) == pytest.approx(0.75, abs=1e-15)

    def test_never_above_one(self):
        dist = make_dist({1: 1.0}, realizations=10)
        assert null_pvalue(dist, 1) <= 1.0

    def test_monotone_in_extent(self):
        dist = make_dist(
            {0: 0.1, 1: 0.2, 3: 0.3, 7: 0.25, 20: 0.15}, realizations=500
        )
        ps = [null_pvalue(dist, k) for k in range(1, 25)]
        assert all(a >= b for a, b in zip(ps, ps[1:]))

    def test_bad_extent(self):
        dist = make_dist({0: 1.0}, realizations=10)
        with pytest.raises(ValueError):
            null_pvalue(dist, 0)

    def test_method_alias(self):
        dist = make_dist({0: 0.5, 3: 0.5}, realizations=99)
        assert dist.p_value(2) == null_pvalue(dist, 2)


class TestSerialization:
    def test_schema(self):
        dist = make_dist({0: 0.5, 2: 0.375, 9: 0.125}, realizations=8)
        text = dist.to_json()
        assert text.endswith("\n")
        assert "\n" not in text[:-1]
        obj = json.loads(text)
        assert set(obj) == {
            "format_version",
            "B",
            "master_seed",
            "cdt_p",
            "t_threshold",
            "df",
            "connectivity",
            "mass",
        }
        assert obj["format_version"] == 1
        assert obj["B"] == 8
        assert obj["mass"] == [[0, 0.5], [2, 0.375], [9, 0.125]]

    def test_mass_sorted_by_extent(self):
        dist = make_dist({9: 0.125, 0: 0.5, 2: 0.375}, realizations=8)
        obj = json.loads(dist.to_json())
        extents = [k for k, _ in obj["mass"]]
        assert extents == sorted(extents)

    def test_round_trip(self):
        dist = make_dist(
            {0: 1.0 / 3.0, 2: 2.0 / 9.0, 3: 1.0 / 9.0, 5: 1.0 / 3.0},
            realizations=3,
        )
        back = ExtentNullDistribution.from_json(dist.to_json())
        assert back.mass == dist.mass
        assert back.realizations == dist.realizations
        assert back.cdt_p == dist.cdt_p
        assert back.t_threshold == dist.t_threshold
        assert back.df == dist.df
        assert back.connectivity is dist.connectivity
        assert back.master_seed == dist.master_seed
        assert back.zero_cluster_fraction == dist.zero_cluster_fraction

    def test_serialization_is_byte_stable(self):
        dist = make_dist({0: 0.7, 11: 0.3}, realizations=10)
        text = dist.to_json()
        back = ExtentNullDistribution.from_json(text)
        assert back.to_json() == text
        assert dist.to_json() == text

    def test_save_load(self, tmp_path):
        dist = make_dist({0: 0.5, 4: 0.5}, realizations=2)
        path = tmp_path / "null.json"
        dist.save(path)
        assert ExtentNullDistribution.load(path).mass == dist.mass

    def test_format_version_checked(self):
        dist = make_dist({0: 1.0}, realizations=1)
        text = dist.to_json().replace('"format_version":1', '"format_version":2')
        with pytest.raises(ValueError, match="format"):
            ExtentNullDistribution.from_json(text)

    def test_seventeen_digit_masses_survive(self):
        mass, _ = pool_normalized_histograms([[2], [2], [3]])
        dist = make_dist(mass, realizations=3)
        back = ExtentNullDistribution.from_json(dist.to_json())
        for k in mass:
            assert back.mass[k] == mass[k]  # bit-exact through text


class TestBuildNull:
    def test_deterministic(self):
        stack = noise_stack(0)
        cfg = PermutationConfig(master_seed=7, realizations=50, cdt_p=0.05)
        a = build_null(stack, cfg)
        b = build_null(stack, cfg)
        assert a.mass == b.mass
        assert a.to_json() == b.to_json()

    def test_thread_count_invariance(self):
        stack = noise_stack(1)
        cfg = PermutationConfig(master_seed=3, realizations=64, cdt_p=0.05)
        serial = build_null(stack, cfg, threads=1)
        parallel = build_null(stack, cfg, threads=4)
        assert serial.mass == parallel.mass
        assert serial.to_json() == parallel.to_json()

    def test_matches_manual_realizations(self):
        stack = noise_stack(2, dims=(5, 5, 5), n=6)
        cfg = PermutationConfig(master_seed=11, realizations=40, cdt_p=0.05)
        dist = build_null(stack, cfg)

        lists = []
        for r in range(1, cfg.realizations + 1):
            signs = rng_sign_vector(cfg.master_seed, r, stack.n_subjects)
            tmap = one_sample_tmap(stack, signs)
            cs = extract_clusters(tmap, stack.mask, dist.t_threshold, cfg.connectivity)
            lists.append([c.extent for c in cs])
        mass, zero_frac = pool_normalized_histograms(lists)
        assert dist.mass == mass
        assert dist.zero_cluster_fraction == zero_frac

    def test_metadata(self):
        stack = noise_stack(3, n=9)
        cfg = PermutationConfig(master_seed=5, realizations=10, cdt_p=0.01)
        dist = build_null(stack, cfg)
        assert dist.df == 8
        assert dist.realizations == 10
        assert dist.cdt_p == 0.01
        assert dist.master_seed == 5
        assert dist.t_threshold > 0
        assert sum(dist.mass.values()) == pytest.approx(1.0, abs=1e-9)


class TestAnalyzeContrast:
    def test_scores_observed_clusters(self):
        stack = noise_stack(4)
        cfg = PermutationConfig(master_seed=9, realizations=60, cdt_p=0.1)
        clusters, dist = analyze_contrast(stack, cfg)
        for c in clusters:
            assert c.p_uncorrected == null_pvalue(dist, c.extent)

    def test_p_nonincreasing_in_extent(self):
        stack = noise_stack(5, dims=(8, 8, 8), n=10)
        cfg = PermutationConfig(master_seed=2, realizations=80, cdt_p=0.1)
        clusters, _ = analyze_contrast(stack, cfg)
        assert len(clusters) >= 2  # seed chosen to give several clusters
        # returned order is extent descending, so p must be non-decreasing
        ps = [c.p_uncorrected for c in clusters]
        assert all(a <= b for a, b in zip(ps, ps[1:]))

    def test_strict_cdt_rarely_fires_on_noise(self):
        stack = noise_stack(6, dims=(4, 4, 4), n=6)
        cfg = PermutationConfig(master_seed=1, realizations=20, cdt_p=0.001)
        clusters, dist = analyze_contrast(stack, cfg)
        assert clusters == []
        assert dist.realizations == 20

    def test_bitwise_repeatable(self):
        stack = noise_stack(7)
        cfg = PermutationConfig(master_seed=13, realizations=30, cdt_p=0.05)
        a_clusters, a_dist = analyze_contrast(stack, cfg)
        b_clusters, b_dist = analyze_contrast(stack, cfg)
        assert a_clusters == b_clusters
        assert a_dist.to_json() == b_dist.to_json()


class TestValidityUnderNull:
    def test_false_positive_rate_bounded(self):
        # Complete-null synthetic data: for clusters observed the same way
        # the realizations are drawn, P(p <= alpha) must not exceed alpha
        # by more than Monte Carlo noise.
        trials = 250
        perm = PermutationConfig(master_seed=777, realizations=199, cdt_p=0.05)
        template = SynthConfig(
            master_seed=777, dims=(6, 6, 6), n_subjects=8, fwhm_vox=1.5
        )
        hits = {0.05: 0.0, 0.1: 0.0}
        for t in range(1, trials + 1):
            stack = generate_stack(replace(template, trial_index=t))
            clusters, _ = analyze_contrast(stack, perm)
            if not clusters:
                continue
            for alpha in hits:
                frac = sum(c.p_uncorrected <= alpha for c in clusters) / len(clusters)
                hits[alpha] += frac
        for alpha, total in hits.items():
            rate = total / trials
            tol = 3.0 * np.sqrt(alpha * (1 - alpha) / trials)
            assert rate <= alpha + tol, f"alpha={alpha}: rate={rate:.4f}"
