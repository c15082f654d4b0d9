"""Smoke test for the pybatchpomdp extension.

Build and install first:  maturin develop -m crates/py/Cargo.toml
"""

import json
import math

import pybatchpomdp as bp


def main():
    p = bp.Pomdp.random(5, 2, 5, seed=3)
    assert (p.n_states, p.n_actions, p.n_obs) == (5, 2, 5)
    assert bp.Pomdp.from_json(p.to_json()).fingerprint() == p.fingerprint()

    b = p.belief(0, [(1, 0.0, 2)])
    assert abs(sum(b) - 1.0) < 1e-12

    data = p.sample(50, 30, seed=1)
    assert len(data) == 50 and data.n_transitions == 1500
    assert bp.Dataset.from_jsonl(data.to_jsonl()).n_transitions == 1500

    m = bp.Mapping("phi_h:2", p)
    assert m.descriptor == "phi_h:2" and m.cardinality == 5 + 5 * 2 * 5
    mdp = bp.AugmentedMdp.fit(data, m, 0.9)
    values, policy = mdp.solve()
    assert len(values) == len(policy) == m.cardinality
    assert abs(sum(mdp.transition_row(0, 0)) - 1.0) < 1e-12

    exact = bp.exact_value(p, m, policy, 30)
    mean, se = bp.rollout_value(p, m, policy, n_rollouts=2000, horizon=30, seed=5)
    assert abs(mean - exact) < 4 * se + 1e-9, (mean, se, exact)

    chain = bp.Pomdp.fixture("chain2")
    m1 = bp.Mapping("phi_h:1", chain)
    assert bp.exact_value(chain, m1, [0, 0], 100) == 50.0
    assert bp.epsilon(chain, m1, 3) == 0.0

    assert math.isclose(bp.overfitting_bound(100, 1.0, 0.95, 5, 2, 0.05), 173.96275877240124, rel_tol=1e-12)
    assert math.isclose(bp.bias_bound(0.1, 2.0, 0.9), 400.0, rel_tol=1e-12)
    d = [[0.0, 1.0], [1.0, 0.0]]
    assert math.isclose(bp.kantorovich(d, [1.0, 0.0], [0.25, 0.75]), 0.75)

    metric = mdp.bisimulation()
    assert metric[0][0] == 0.0 and len(metric) == m.cardinality

    csv = bp.run_sweep(
        'n_pomdps = 1\nn_tr = [2]\nmappings = ["phi_h:1"]\nn_datasets = 2\n'
        "[rollout]\nn_rollouts = 10\nhorizon = 5\n"
    )
    assert csv.splitlines()[0].startswith("experiment_id,")
    report = json.loads(bp.bounds_report('n_pomdps = 1\nn_tr = [5]\nn_datasets = 2\nbounds_horizon = 2\n'))
    assert report["bias"]["violations"] == 0

    try:
        bp.Mapping("phi_x:1", p)
    except bp.BatchPomdpError:
        pass
    else:
        raise AssertionError("bad descriptor accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
