import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drate.data import (
    Backend,
    ColumnSchema,
    EstimateResult,
    EstimatorId,
    IndexDirections,
    ObservationSet,
    load_dataset,
    save_dataset,
    validate,
)
from drate.errors import DataError

SCHEMA2 = ColumnSchema(treatment="d", outcome="y", covariates=("x1", "x2"))


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadDataset:
    def test_three_row_csv(self, tmp_path):
        path = write_csv(tmp_path, "x1,x2,d,y\n1,2,0,3.5\n-1,0.5,1,4\n0,0,1,5\n")
        obs = load_dataset(path, SCHEMA2)
        assert obs.n == 3 and obs.p == 2
        np.testing.assert_array_equal(obs.treatments, [0.0, 1.0, 1.0])
        np.testing.assert_array_equal(obs.outcomes, [3.5, 4.0, 5.0])

    def test_non_binary_treatment(self, tmp_path):
        path = write_csv(tmp_path, "x1,x2,d,y\n1,2,2,3\n")
        with pytest.raises(DataError, match="non-binary treatment"):
            load_dataset(path, SCHEMA2)

    def test_boolean_literals_rejected(self, tmp_path):
        path = write_csv(tmp_path, "x1,x2,d,y\n1,2,true,3\n")
        with pytest.raises(DataError, match="non-binary treatment"):
            load_dataset(path, SCHEMA2)

    def test_single_covariate_schema(self, tmp_path):
        path = write_csv(tmp_path, "x1,d,y\n1,0,3\n")
        with pytest.raises(DataError, match="p must be >= 2"):
            load_dataset(path, ColumnSchema("d", "y", ("x1",)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_dataset(tmp_path / "nope.csv", SCHEMA2)

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path, "x1,x2,y\n1,2,3\n")
        with pytest.raises(DataError, match="missing column"):
            load_dataset(path, SCHEMA2)

    def test_non_numeric_cell(self, tmp_path):
        path = write_csv(tmp_path, "x1,x2,d,y\n1,foo,0,3\n")
        with pytest.raises(DataError, match="non-numeric cell at row 0"):
            load_dataset(path, SCHEMA2)

    def test_single_arm_warns_but_loads(self, tmp_path):
        path = write_csv(tmp_path, "x1,x2,d,y\n1,2,1,3\n2,1,1,4\n")
        with pytest.warns(UserWarning, match="single-arm"):
            obs = load_dataset(path, SCHEMA2)
        assert obs.n == 2

    def test_row_order_preserved(self, tmp_path):
        path = write_csv(tmp_path, "x1,x2,d,y\n9,0,1,1\n8,0,0,2\n7,0,1,3\n")
        obs = load_dataset(path, SCHEMA2)
        np.testing.assert_array_equal(obs.covariates[:, 0], [9.0, 8.0, 7.0])


class TestValidate:
    def test_valid_set_is_clean(self):
        obs = ObservationSet(np.ones((3, 2)), np.array([0, 1, 0]), np.arange(3.0))
        assert validate(obs) == []

    def test_nan_outcome_names_row(self):
        obs = ObservationSet(np.ones((3, 2)), np.array([0, 1, 0]), np.array([1.0, np.nan, 2.0]))
        bad = [v for v in validate(obs) if v.severity == "error"]
        assert len(bad) == 1 and bad[0].row == 1

    def test_single_arm_is_warning(self):
        obs = ObservationSet(np.ones((2, 2)), np.array([1, 1]), np.zeros(2))
        out = validate(obs)
        assert [v.severity for v in out] == ["warning"]
        assert "single-arm" in out[0].message

    def test_non_binary_treatment(self):
        obs = ObservationSet(np.ones((2, 2)), np.array([0.0, 0.5]), np.zeros(2))
        assert any("non-binary" in v.message for v in validate(obs))

    def test_p1_reported(self):
        obs = ObservationSet(np.ones((2, 1)), np.array([0, 1]), np.zeros(2))
        assert any("p must be >= 2" in v.message for v in validate(obs))


class TestRoundTrip:
    @given(
        rows=st.lists(
            st.tuples(
                st.floats(-1e12, 1e12, allow_nan=False),
                st.floats(-1e12, 1e12, allow_nan=False),
                st.integers(0, 1),
                st.floats(-1e12, 1e12, allow_nan=False),
            ),
            min_size=1,
            max_size=20,
        )
    )
    @settings(max_examples=50, deadline=None)
    def test_save_load_identity(self, rows, tmp_path_factory):
        tmp = tmp_path_factory.mktemp("roundtrip")
        x = np.array([[r[0], r[1]] for r in rows])
        d = np.array([r[2] for r in rows], dtype=float)
        y = np.array([r[3] for r in rows])
        if len(rows) > 1 and d.min() == d.max():
            d[0] = 1.0 - d[0]
        obs = ObservationSet(x, d, y)
        path = tmp / "rt.csv"
        save_dataset(obs, path)
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # n=1 samples warn single-arm
            back = load_dataset(path, ColumnSchema("d", "y", ("x1", "x2")))
        np.testing.assert_array_equal(back.covariates, obs.covariates)
        np.testing.assert_array_equal(back.treatments, obs.treatments)
        np.testing.assert_array_equal(back.outcomes, obs.outcomes)


class TestEstimatorId:
    def test_backend_table(self):
        expected = {
            1: (Backend.PARAMETRIC, Backend.PARAMETRIC),
            2: (Backend.PARAMETRIC, Backend.NONPARAMETRIC),
            3: (Backend.NONPARAMETRIC, Backend.PARAMETRIC),
            4: (Backend.NONPARAMETRIC, Backend.NONPARAMETRIC),
            5: (Backend.SEMIPARAMETRIC, Backend.PARAMETRIC),
            6: (Backend.PARAMETRIC, Backend.SEMIPARAMETRIC),
            7: (Backend.SEMIPARAMETRIC, Backend.NONPARAMETRIC),
            8: (Backend.NONPARAMETRIC, Backend.SEMIPARAMETRIC),
            9: (Backend.SEMIPARAMETRIC, Backend.SEMIPARAMETRIC),
        }
        for k, (ps, orb) in expected.items():
            e = EstimatorId(k)
            assert (e.ps_backend, e.or_backend) == (ps, orb)

    @pytest.mark.parametrize("bad", [0, 10, -1])
    def test_out_of_range(self, bad):
        with pytest.raises(ValueError):
            EstimatorId(bad)


class TestResultAndDirections:
    def test_delta_is_difference(self):
        r = EstimateResult(theta1_hat=10.25, theta0_hat=5.125, estimator=EstimatorId(1))
        assert r.delta_hat == 10.25 - 5.125

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    @settings(max_examples=50, deadline=None)
    def test_delta_exact(self, t1, t0):
        assert EstimateResult(t1, t0).delta_hat == t1 - t0

    def test_directions_must_be_unit(self):
        with pytest.raises(ValueError, match="unit norm"):
            IndexDirections(ps=np.array([1.0, 1.0]), or_treated=np.array([1.0, 0.0]),
                            or_control=np.array([1.0, 0.0]))

    def test_row_mismatch_rejected(self):
        with pytest.raises(ValueError, match="row mismatch"):
            ObservationSet(np.ones((3, 2)), np.array([0, 1]), np.zeros(3))

    def test_arrays_read_only(self):
        obs = ObservationSet(np.ones((2, 2)), np.array([0, 1]), np.zeros(2))
        with pytest.raises(ValueError):
            obs.covariates[0, 0] = 9.0
