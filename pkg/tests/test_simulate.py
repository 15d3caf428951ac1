import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hypolab.models as md
import hypolab.simulate as sim


def test_config_validation():
    with pytest.raises(ValueError):
        sim.SimConfig(dt=0.0, horizon=1.0)
    with pytest.raises(ValueError):
        sim.SimConfig(dt=1e-3)
    with pytest.raises(ValueError):
        sim.SimConfig(dt=1e-3, horizon=1.0, nsteps=100)
    cfg = sim.SimConfig(dt=0.25, horizon=1.3, stride=4)
    # nearest step count, then padded up to a stride multiple
    assert cfg.resolved_steps() == 8
    assert sim.SimConfig(dt=1e-3, horizon=1.0).resolved_steps() == 1000


def test_path_determinism():
    m = md.builtin("toy-cascade")
    cfg = sim.SimConfig(dt=1e-3, horizon=2.0, seed=99)
    a = sim.simulate_path(m, [1.0, 1.0, 0.0], cfg)
    b = sim.simulate_path(m, [1.0, 1.0, 0.0], cfg)
    assert np.array_equal(a.states, b.states)
    assert a.seed == b.seed == 99


def test_path_stride_subsamples_same_trajectory():
    m = md.builtin("toy-cascade")
    dense = sim.simulate_path(m, [1.0, 1.0, 0.0],
                              sim.SimConfig(dt=1e-3, nsteps=1000, seed=7))
    coarse = sim.simulate_path(m, [1.0, 1.0, 0.0],
                               sim.SimConfig(dt=1e-3, nsteps=1000, seed=7,
                                             stride=10))
    assert np.array_equal(dense.states[::10], coarse.states)
    assert dense.node_spacing == pytest.approx(1e-3)
    assert coarse.node_spacing == pytest.approx(1e-2)


def test_distinct_seeds_decorrelate():
    m = md.builtin("toy-cascade")
    a = sim.simulate_path(m, [1.0, 1.0, 0.0],
                          sim.SimConfig(dt=1e-3, horizon=1.0, seed=1))
    b = sim.simulate_path(m, [1.0, 1.0, 0.0],
                          sim.SimConfig(dt=1e-3, horizon=1.0, seed=2))
    assert not np.array_equal(a.states, b.states)


def test_batch_seed_modes():
    m = md.builtin("toy-cascade")
    cfg = sim.SimConfig(dt=1e-2, horizon=0.5, seed=11)
    start = [1.0, 1.0, 0.0]
    recs = sim.simulate_batch(m, [start] * 3, cfg)
    assert len(recs) == 3
    assert len({r.seed for r in recs}) == 3
    listed = sim.simulate_batch(m, [start] * 2, cfg, seeds=[5, 6])
    assert [r.seed for r in listed] == [5, 6]
    again = sim.simulate_batch(m, [start] * 2, cfg, seeds=[5, 6])
    for r, s in zip(listed, again):
        assert np.array_equal(r.states, s.states)
    with pytest.raises(ValueError):
        sim.simulate_batch(m, [start] * 2, cfg, seeds=[5])


def test_batch_scalar_seed_derives_per_replicate():
    m = md.builtin("toy-cascade")
    cfg = sim.SimConfig(dt=1e-2, horizon=0.5, seed=40)
    start = [1.0, 1.0, 0.0]
    recs = sim.simulate_batch(m, [start] * 2, cfg, seeds=40)
    solo = sim.simulate_path(
        m, start, sim.SimConfig(dt=1e-2, horizon=0.5, seed=recs[0].seed))
    assert np.array_equal(recs[0].states, solo.states)
    assert recs[0].seed != recs[1].seed


def test_grid_chain_exact_stride():
    m = md.builtin("toy-cascade")
    rec = sim.simulate_path(m, [1.0, 1.0, 0.0],
                            sim.SimConfig(dt=1e-2, horizon=10.0, seed=3))
    chain = sim.extract_grid_chain(rec, m.period)
    assert chain.states.shape[0] == 11
    assert chain.node_offset == 0.0
    assert np.array_equal(chain.states[0], rec.states[0])
    assert np.allclose(chain.times, np.arange(11.0))


def test_grid_chain_offset_when_dt_misaligned():
    m = md.builtin("toy-cascade")
    rec = sim.simulate_path(m, [1.0, 1.0, 0.0],
                            sim.SimConfig(dt=3e-3, horizon=5.0, seed=3))
    chain = sim.extract_grid_chain(rec, m.period)
    assert chain.node_offset > 0
    assert chain.node_offset <= 1.5e-3 + 1e-12


def test_grid_chain_period_longer_than_span():
    m = md.builtin("toy-cascade")
    rec = sim.simulate_path(m, [1.0, 1.0, 0.0],
                            sim.SimConfig(dt=1e-2, horizon=0.5, seed=3))
    with pytest.raises(sim.SimulationError):
        sim.extract_grid_chain(rec, m.period)


@given(st.integers(1, 7))
@settings(max_examples=7, deadline=None)
def test_grid_chain_count_property(periods):
    m = md.builtin("toy-cascade")
    rec = sim.simulate_path(
        m, [1.0, 1.0, 0.0],
        sim.SimConfig(dt=1e-2, horizon=float(periods), seed=5))
    chain = sim.extract_grid_chain(rec, m.period)
    assert chain.states.shape[0] == periods + 1


def test_domain_clamp_counts_events():
    m = md.builtin("hodgkin-huxley")
    eq = md.equilibrium_state(m)
    phi0 = np.array(eq.as_array())
    phi0[1] = 0.999  # start a gate near its ceiling so noise pushes it out
    big = m.with_sigma([[10.0]])
    rec = sim.simulate_path(big, phi0,
                            sim.SimConfig(dt=1e-2, horizon=5.0, seed=8,
                                          clamp="domain"))
    vals = rec.valid_states()
    for j, (lo, hi) in enumerate(big.domain_y, start=big.n_x):
        assert np.all(vals[:, j] >= lo - 1e-12)
        assert np.all(vals[:, j] <= hi + 1e-12)


def test_divergence_is_recorded():
    blow = md.ModelSpec.from_json_dict({
        "name": "blowup", "n_x": 1, "n_y": 1, "n_w": 1, "period": 1.0,
        "f": ["(pow (x 1) 3)"], "g": ["(const 0)"], "b": ["(const 0)"],
        "sigma": [["(const 0)"]],
        "signal": {"kind": "zero", "offset": [0.0]}})
    rec = sim.simulate_path(blow, [5.0, 0.0, 0.0],
                            sim.SimConfig(dt=0.5, horizon=50.0, seed=1))
    assert rec.diverged_step >= 0
    assert rec.n_valid < rec.states.shape[0]
    assert np.all(np.isfinite(rec.valid_states()))


def test_fresh_seed_varies():
    seen = {sim.fresh_seed() for _ in range(8)}
    assert len(seen) > 1
