import numpy as np
import pytest

from mghs.simulate import (
    CALIBRATED_EDGE_PROB,
    Scenario,
    ScenarioSpec,
    generate_precision_set,
    generate_scenario,
    read_group_csv,
    read_truth,
    sample_mvn,
    write_scenario,
)


def _check_truth(omega, adj):
    for k in range(omega.shape[0]):
        assert np.all(np.diag(omega[k]) == 1.0)
        np.linalg.cholesky(omega[k])
        assert np.array_equal(omega[k], omega[k].T)
        off = ~np.eye(omega.shape[1], dtype=bool)
        assert np.array_equal(adj[k][off], omega[k][off] != 0)
        assert not np.any(np.diag(adj[k]))


@pytest.mark.parametrize("scenario", list(Scenario))
def test_every_scenario_is_valid(scenario):
    spec = ScenarioSpec(scenario=scenario, K=4, p=20, n=10, seed=3)
    omega, adj, regen = generate_precision_set(spec, np.random.default_rng(spec.seed))
    _check_truth(omega, adj)
    assert regen == 0


def test_support_is_block_diagonal():
    spec = ScenarioSpec(scenario=Scenario.Independent, K=2, p=20, block_size=5, edge_prob=0.9)
    _, adj, _ = generate_precision_set(spec, np.random.default_rng(0))
    blocks = np.arange(20) // 5
    cross = blocks[:, None] != blocks[None, :]
    assert not np.any(adj[:, cross])


def test_full_dependence_identical():
    spec = ScenarioSpec(scenario="full", K=4, p=20, seed=1)
    omega, _, _ = generate_precision_set(spec, np.random.default_rng(1))
    for k in range(1, 4):
        assert np.array_equal(omega[k], omega[0])


def test_coupled_pairs():
    sim = generate_scenario(ScenarioSpec(scenario="coupled", K=4, p=20, n=15, seed=2))
    a = sim.adjacency
    assert np.array_equal(a[0], a[1]) and np.array_equal(a[2], a[3])
    assert not np.array_equal(a[0], a[2])


def test_independent_edge_count_calibration():
    counts = []
    for seed in range(20):
        spec = ScenarioSpec(scenario="independent", K=4, p=50, seed=seed)
        _, adj, _ = generate_precision_set(spec, np.random.default_rng(seed))
        counts.append(adj.sum(axis=(1, 2)) / 2)
    mean = np.mean(counts)
    assert 0.7 * 82.5 <= mean <= 1.3 * 82.5
    assert CALIBRATED_EDGE_PROB == pytest.approx(82.5 / 225)


def test_p2020_symmetric_difference():
    spec = ScenarioSpec(scenario="p2020", K=4, p=50, perturb_frac=0.25, seed=4)
    _, adj, _ = generate_precision_set(spec, np.random.default_rng(4))
    iu = np.triu_indices(50, 1)
    for k in range(3):
        prev, cur = adj[k][iu], adj[k + 1][iu]
        m = int(round(0.25 / 2 * prev.sum()))
        assert np.sum(prev != cur) == 2 * m
        assert cur.sum() == prev.sum()


def test_generate_scenario_deterministic():
    spec = ScenarioSpec(scenario="p2020", K=2, p=10, n=5, seed=8)
    a, b = generate_scenario(spec), generate_scenario(spec)
    assert np.array_equal(a.omega, b.omega)
    for ya, yb in zip(a.data.Y, b.data.Y):
        assert np.array_equal(ya, yb)
    assert a.data.Y[0].shape == (5, 10)


@pytest.mark.parametrize("kwargs", [
    dict(scenario="coupled", K=3),
    dict(p=52),
    dict(block_size=7, p=70),
    dict(edge_prob=1.5),
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ScenarioSpec(**kwargs)


def test_sample_mvn():
    rng = np.random.default_rng(0)
    y = sample_mvn(np.eye(3), 100_000, rng)
    assert np.max(np.abs(np.cov(y.T) - np.eye(3))) < 0.02
    assert sample_mvn(np.eye(3), 1, rng).shape == (1, 3)
    y = sample_mvn(np.array([[1.0, 0.8], [0.8, 1.0]]), 100_000, rng)
    assert np.corrcoef(y.T)[0, 1] == pytest.approx(0.8, abs=0.01)
    with pytest.raises(np.linalg.LinAlgError):
        sample_mvn(np.array([[1.0, 2.0], [2.0, 1.0]]), 5, rng)


def test_write_and_read_back(tmp_path):
    sim = generate_scenario(ScenarioSpec(scenario="coupled", K=2, p=10, n=7, seed=5))
    paths = write_scenario(tmp_path, sim)
    assert [p.name for p in paths] == ["group_1.csv", "group_2.csv", "truth.json"]
    for k in range(2):
        assert np.array_equal(read_group_csv(paths[k]), sim.data.Y[k])
    omega, adj = read_truth(tmp_path / "truth.json")
    assert np.array_equal(omega, sim.omega) and np.array_equal(adj, sim.adjacency)


def test_read_group_csv_formats_and_errors(tmp_path):
    f = tmp_path / "a.csv"
    f.write_text("1,2\n3,4\n")
    assert read_group_csv(f).tolist() == [[1.0, 2.0], [3.0, 4.0]]
    f.write_text("x,y\n1,2\n")
    assert read_group_csv(f).tolist() == [[1.0, 2.0]]
    f.write_text("x,y\n1,2\n3,oops\n")
    with pytest.raises(ValueError, match="row 3, column 2"):
        read_group_csv(f)
    f.write_text("1,2\n3\n")
    with pytest.raises(ValueError, match="row 2"):
        read_group_csv(f)
    f.write_text("")
    with pytest.raises(ValueError):
        read_group_csv(f)
