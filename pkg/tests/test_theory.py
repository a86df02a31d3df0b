import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.sparse as sp

from resembed.theory import (BoundParams, IslandStructureError, _terms, bhc_bound, covering_count,
                             envelope_radius, find_islands, island_graph, mlp_robustness,
                             prop1_verify, theorem_bound_at_r, theorem_bound_inf)


class TestCounting:
    @pytest.mark.parametrize("R,d,r,expected", [(1, 1, 2, 1), (1, 1, 1, 2), (1, 2, 0.5, 32)])
    def test_covering_count(self, R, d, r, expected):
        assert covering_count(R, d, r)[1] == pytest.approx(expected, rel=1e-12)

    def test_covering_count_overflow_is_reported_in_logs(self):
        log_l, value = covering_count(1.0, 18 * 21, 1e-6)
        assert value is None and log_l > 700

    def test_bhc_values(self):
        assert bhc_bound(1, 2 * math.log(2), 1.0) == pytest.approx(1.0, rel=1e-12)
        expected = math.sqrt((20 * math.log(2) + 2 * math.log(20)) / 1000)
        assert bhc_bound(10, 1000, 0.05) == pytest.approx(expected, rel=1e-12)
        assert bhc_bound(10, 1000, 0.05) == pytest.approx(0.140906, abs=1e-6)
        assert bhc_bound(10, 2000, 0.05) == pytest.approx(bhc_bound(10, 1000, 0.05) / math.sqrt(2))

    def test_robustness(self):
        assert mlp_robustness(1, 5, 1, 1, 1, 3)[0] == pytest.approx(1.0)
        assert mlp_robustness(2, 3, 4, 0.1, 1, 3)[0] == pytest.approx(1.6)
        assert mlp_robustness(1.3, 2, 3, 0.4, 1, 3)[0] == pytest.approx(2 * mlp_robustness(1.3, 2, 3, 0.2, 1, 3)[0])


class TestBound:
    def test_first_term(self):
        P = BoundParams(D=2, T=3, p=1, W_norm=1.0)
        assert math.exp(_terms(P, 0.5, "thm2")[0]) == pytest.approx(1.0)

    def test_large_sample_limit(self):
        P = BoundParams(N=1e300, d=2, T=1, p=1)
        first = math.exp(_terms(P, 0.3, "thm2")[0])
        assert theorem_bound_at_r(P, 0.3) == pytest.approx(first, rel=1e-6)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            theorem_bound_at_r(BoundParams(), 0.0)
        with pytest.raises(ValueError, match="delta"):
            BoundParams(delta=1.5)
        with pytest.raises(ValueError):
            theorem_bound_at_r(BoundParams(), 1.0, "thm3")

    def test_infimum_property(self, rng):
        P = BoundParams()
        _, best = theorem_bound_inf(P)
        for r in np.exp(rng.uniform(np.log(1e-6), np.log(1e6), 100)):
            assert best <= theorem_bound_at_r(P, r) * (1 + 1e-12)

    @pytest.mark.parametrize("variant", ["thm1", "thm2"])
    def test_monotone_in_inputs(self, variant):
        P = BoundParams()
        b = theorem_bound_inf(P, variant)[1]
        assert theorem_bound_inf(replace(P, R_max=2.0), variant)[1] > b
        assert theorem_bound_inf(replace(P, W_norm=1.5), variant)[1] > b
        assert theorem_bound_inf(replace(P, N=4000), variant)[1] < theorem_bound_inf(replace(P, N=1000), variant)[1]
        if variant == "thm2":
            assert theorem_bound_inf(replace(P, N_S=48), variant)[1] > b


class TestIslands:
    def test_hand_example(self):
        Z = island_graph([3])
        X = np.array([[0.0, 0], [2, 0], [0, 2]])
        rep = prop1_verify(Z, X)
        isl = rep.islands[0]
        ms = (math.sqrt(8 / 9) + 2 * math.sqrt(20 / 9)) / 3
        assert isl["ms_before"] == pytest.approx(ms, rel=1e-12)
        assert ms == pytest.approx(1.30808, abs=1e-5)
        assert isl["ms_after"] == pytest.approx(0.65404, abs=1e-5)
        assert isl["center_shift"] < 1e-15
        assert rep.max_island_deviation < 1e-12

    def test_far_islands_keep_center_distance(self, rng):
        Z = island_graph([4, 5])
        X = rng.normal(size=(9, 3))
        X[4:] += 1000
        rep = prop1_verify(Z, X)
        assert abs(rep.pairs[0]["after"] - rep.pairs[0]["before"]) <= 1e-10 * rep.pairs[0]["before"]

    def test_collapsed_island(self):
        rep = prop1_verify(island_graph([4]), np.ones((4, 2)))
        assert rep.islands[0]["ms_before"] == 0 and rep.islands[0]["ms_after"] == 0

    def test_rejects_non_island_graphs(self):
        path = sp.csr_matrix(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float))
        with pytest.raises(IslandStructureError, match="missing"):
            find_islands(path)
        with pytest.raises(IslandStructureError, match="no edges"):
            find_islands(sp.csr_matrix((2, 2)))

    def test_report_json(self, tmp_path, rng):
        rep = prop1_verify(island_graph([3, 3]), rng.normal(size=(6, 2)))
        text = rep.to_json(tmp_path / "r.json")
        assert (tmp_path / "r.json").read_text() == text + "\n"


class TestEnvelopeRadius:
    def test_examples(self):
        assert envelope_radius([[1.0, 2.0]]) == 0
        assert envelope_radius([-1.0, 1.0]) == 1
        assert envelope_radius([[0, 0], [2, 0], [0, 2]]) == pytest.approx(math.sqrt(20 / 9))
        assert math.sqrt(20 / 9) == pytest.approx(1.49071, abs=1e-5)

    def test_translation_and_scale(self, rng):
        X = rng.normal(size=(10, 4))
        r = envelope_radius(X)
        assert envelope_radius(X + 7.5) == pytest.approx(r)
        assert envelope_radius(3 * X) == pytest.approx(3 * r)
