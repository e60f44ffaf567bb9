import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedalt.algorithms import AlgorithmConfig, RoundRecord, soft_fed_avg
from fedalt.exceptions import InputError
from fedalt.instance import generate_logistic_instance, generate_quadratic_instance
from fedalt.serialize import (dumps_instance, dumps_models, load_instance, loads_instance, loads_models,
                              save_instance, trace_to_csv)


def same_instance(a, b):
    assert a.family == b.family
    np.testing.assert_array_equal(a.optima, b.optima)
    np.testing.assert_array_equal(a.weights, b.weights)
    np.testing.assert_array_equal(a.domain.center, b.domain.center)
    assert a.domain.radius == b.domain.radius
    assert a.constants == b.constants


class TestInstanceFiles:
    def test_quadratic_round_trip(self, tmp_path):
        inst, data = generate_quadratic_instance(3, [2, 4, 5], 2, target_R2=0.7, rho=1.3, seed=1)
        save_instance(tmp_path / "q.txt", inst, data)
        inst2, data2 = load_instance(tmp_path / "q.txt")
        same_instance(inst, inst2)
        for a, b in zip(data.clients, data2.clients):
            np.testing.assert_array_equal(a.x, b.x)
            assert b.y is None

    def test_logistic_round_trip(self):
        inst, data = generate_logistic_instance(2, 6, 3, c_X=0.8, target_R2=0.2, seed=5)
        inst2, data2 = loads_instance(dumps_instance(inst, data))
        same_instance(inst, inst2)
        for a, b in zip(data.clients, data2.clients):
            np.testing.assert_array_equal(a.x, b.x)
            np.testing.assert_array_equal(a.y, b.y)

    def test_text_is_stable(self):
        inst, data = generate_logistic_instance(2, 3, 2, seed=0)
        text = dumps_instance(inst, data)
        assert dumps_instance(*loads_instance(text)) == text
        assert text.startswith("fedalt-instance 1\n") and text.endswith("end\n")

    def test_without_data(self):
        inst, _ = generate_quadratic_instance(2, 3, 2, seed=0)
        inst2, data2 = loads_instance(dumps_instance(inst))
        assert data2 is None
        same_instance(inst, inst2)

    def test_bad_header(self):
        with pytest.raises(InputError):
            loads_instance("something else\n")

    def test_truncated(self):
        inst, data = generate_quadratic_instance(2, 3, 2, seed=0)
        text = dumps_instance(inst, data)
        with pytest.raises(InputError):
            loads_instance(text[: text.rindex("end")])


class TestModelFiles:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 4), st.booleans(), st.integers(0, 2 ** 32 - 1))
    def test_round_trip(self, m, d, with_global, seed):
        rng = np.random.default_rng(seed)
        locs = rng.normal(size=(m, d)) * 10.0 ** rng.integers(-300, 300)
        glob = rng.normal(size=d) if with_global else None
        locs2, glob2 = loads_models(dumps_models(locs, glob))
        np.testing.assert_array_equal(locs, locs2)
        if with_global:
            np.testing.assert_array_equal(glob, glob2)
        else:
            assert glob2 is None

    def test_bad_header(self):
        with pytest.raises(InputError):
            loads_models("nope\n")


class TestTrace:
    def test_columns_and_values(self):
        trace = [RoundRecord(1, 0.25, [0.1, 0.2], 1.5), RoundRecord(2, None, None, 2.0)]
        text = trace_to_csv(trace)
        lines = text.splitlines()
        assert lines[0] == "round,global_dist2_oracle,client_dist2_0,client_dist2_1,wall_ms"
        assert lines[1] == "1,0.25,0.1,0.2,1.5"
        assert lines[2] == "2,,,,2.0"

    def test_from_training(self):
        inst, data = generate_quadratic_instance(2, 5, 2, seed=0)
        out = soft_fed_avg(inst.loss, data, AlgorithmConfig(lam=1.0, rounds=3, local_steps=2, record_trace=True),
                           oracle=None)
        rows = trace_to_csv(out.trace, m=2).splitlines()
        assert len(rows) == 4
        assert [r.split(",")[0] for r in rows[1:]] == ["1", "2", "3"]
