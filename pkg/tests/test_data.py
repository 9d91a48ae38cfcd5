import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrpolicy.data import (ColumnMapping, Dataset, FoldAssignment, load_dataset, make_pair_folds,
                           make_unit_folds)
from lrpolicy.errors import ArgumentError, ConfigError, DataError

MAPPING = {"outcome": "income", "treatment": "preschool", "covariates": ["mother_edu", "parent_inc"]}


def write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_four_rows(tmp_path):
    p = write(tmp_path, "income,preschool,mother_edu,parent_inc\n1,0,12,3\n2,1,16,4\n3,0,10,2\n4,1,12,5\n")
    data = load_dataset(p, MAPPING)
    assert (data.n, data.k) == (4, 2)
    assert data.columns == ("mother_edu", "parent_inc")
    np.testing.assert_array_equal(data.d, [0, 1, 0, 1])
    assert data.x1 is None


def test_non_binary_treatment_names_row(tmp_path):
    p = write(tmp_path, "income,preschool,mother_edu,parent_inc\n1,0,12,3\n2,2,16,4\n")
    with pytest.raises(DataError, match="row 2"):
        load_dataset(p, MAPPING)


def test_missing_column_is_config_error(tmp_path):
    p = write(tmp_path, "income,preschool,parent_inc\n1,0,3\n2,1,4\n")
    with pytest.raises(ConfigError, match="mother_edu"):
        load_dataset(p, MAPPING)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_dataset(tmp_path / "nope.csv", MAPPING)


def test_listwise_deletion_counts_rows(tmp_path):
    p = write(tmp_path, "income,preschool,mother_edu,parent_inc,unused\n1,0,12,3,\n,1,16,4,1\n3,0,,2,1\n4,1,12,5,1\n")
    data = load_dataset(p, MAPPING)
    assert data.n == 2
    assert data.n_dropped == 2


def test_empty_dataset_is_data_error(tmp_path):
    p = write(tmp_path, "income,preschool,mother_edu,parent_inc\n")
    with pytest.raises(DataError):
        load_dataset(p, MAPPING)


def test_non_numeric_value(tmp_path):
    p = write(tmp_path, "income,preschool,mother_edu,parent_inc\n1,0,12,3\n2,1,abc,4\n")
    with pytest.raises(DataError, match="row 2"):
        load_dataset(p, MAPPING)


def test_mapping_file_and_delimiter(tmp_path):
    m = tmp_path / "map.yaml"
    m.write_text("outcome: income\ntreatment: preschool\ncovariates: [mother_edu]\n"
                 "parental_outcome: parent_inc\ncircumstances: [mother_edu]\n")
    p = write(tmp_path, "income;preschool;mother_edu;parent_inc\n1;0;12;3\n2;1;16;4\n3;1;9;1\n")
    data = load_dataset(p, ColumnMapping.from_file(m), delimiter=";")
    np.testing.assert_array_equal(data.x1, [3, 4, 1])
    assert data.circumstance_cols == ("mother_edu",)


def test_mapping_requires_keys():
    with pytest.raises(ConfigError, match="treatment"):
        ColumnMapping.from_dict({"outcome": "y", "covariates": ["x"]})


def test_dataset_is_read_only():
    data = Dataset(y=[1.0, 2.0], d=[0, 1], x=[[0.0], [1.0]], columns=("a",))
    with pytest.raises(ValueError):
        data.y[0] = 5.0


@pytest.mark.parametrize("kwargs", [
    dict(y=[1.0], d=[1], x=[[0.0]]),
    dict(y=[1.0, 2.0], d=[0, 2], x=[[0.0], [1.0]]),
    dict(y=[1.0, np.nan], d=[0, 1], x=[[0.0], [1.0]]),
])
def test_dataset_validation(kwargs):
    with pytest.raises(DataError):
        Dataset(columns=("a",), **kwargs)


def test_unknown_circumstance_column():
    with pytest.raises(ConfigError):
        Dataset(y=[1.0, 2.0], d=[0, 1], x=[[0.0], [1.0]], columns=("a",), circumstance_cols=("b",))


def test_unit_folds_examples():
    f = make_unit_folds(10, 5, seed=1)
    assert sorted(np.bincount(f.group_of)) == [2] * 5
    g = make_unit_folds(7, 2, seed=1)
    assert sorted(np.bincount(g.group_of)) == [3, 4]
    np.testing.assert_array_equal(make_unit_folds(7, 2, seed=1).group_of, g.group_of)


@pytest.mark.parametrize("n,L", [(3, 4), (5, 1)])
def test_unit_folds_bad_arguments(n, L):
    with pytest.raises(ArgumentError):
        make_unit_folds(n, L)


def test_pair_folds_hand_example():
    units = FoldAssignment(L=2, group_of=np.array([0, 0, 1, 1]))
    pf = make_pair_folds(units)
    squares = [list(zip(f.i, f.j)) for f in pf if f.kind == "square"]
    triangles = [list(zip(f.i, f.j)) for f in pf if f.kind == "triangle"]
    assert squares == [[(0, 1)], [(2, 3)]]
    assert triangles == [[(0, 2), (0, 3), (1, 2), (1, 3)]]


def test_pair_folds_n6_k3():
    units = make_unit_folds(6, 3, seed=0)
    pf = make_pair_folds(units)
    assert sorted(f.size for f in pf if f.kind == "square") == [1, 1, 1]
    assert sorted(f.size for f in pf if f.kind == "triangle") == [4, 4, 4]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(4, 40), K=st.integers(2, 4), seed=st.integers(0, 1000))
def test_pair_folds_partition_and_exclusion(n, K, seed):
    if K > n:
        K = n
    pf = make_pair_folds(make_unit_folds(n, K, seed))
    assert len(pf) == K + K * (K - 1) // 2
    seen = set()
    for f in pf:
        pairs = set(zip(f.i.tolist(), f.j.tolist()))
        assert all(i < j for i, j in pairs)
        assert not pairs & seen
        seen |= pairs
        assert not set(np.concatenate([f.i, f.j]).tolist()) & set(f.train_units.tolist())
    assert seen == set(itertools.combinations(range(n), 2))
    assert pf.n_pairs == n * (n - 1) // 2


def test_unit_fold_splits_partition():
    f = make_unit_folds(23, 4, seed=2)
    ev = np.concatenate([e for e, _ in f.splits()])
    assert sorted(ev.tolist()) == list(range(23))
    for e, t in f.splits():
        assert not set(e) & set(t)
        assert len(e) + len(t) == 23
