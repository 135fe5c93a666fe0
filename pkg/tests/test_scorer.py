import numpy as np
import pytest

from graphood.errors import NumericError, ValidationError
from graphood.knn import build_knn_graph
from graphood.scorer import (
    GatLayer,
    ScorerParams,
    _forward_cache,
    flatten_params,
    forward,
    ground_truth_density,
    init_scorer,
    load_scorer,
    param_items,
    save_scorer,
    scorer_loss,
    train_scorer,
    unflatten_params,
)
from oracles import density_oracle


def random_graph(rng, n, d, k):
    X = rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return build_knn_graph(X, k), X


def zero_mlp(params):
    """Same params with the MLP head zeroed, forcing p = 0.5 on every edge."""
    return ScorerParams(
        layers=params.layers,
        mlp_w1=np.zeros_like(params.mlp_w1), mlp_b1=np.zeros_like(params.mlp_b1),
        mlp_w2=np.zeros_like(params.mlp_w2), mlp_b2=np.zeros_like(params.mlp_b2),
        input_dim=params.input_dim, hidden_dim=params.hidden_dim, seed=params.seed,
    )


def biased_mlp(params, logit):
    """Force a constant linkage logit pair (logit, -logit) on every edge."""
    return ScorerParams(
        layers=params.layers,
        mlp_w1=np.zeros_like(params.mlp_w1), mlp_b1=np.zeros_like(params.mlp_b1),
        mlp_w2=np.zeros_like(params.mlp_w2),
        mlp_b2=np.array([logit, -logit]),
        input_dim=params.input_dim, hidden_dim=params.hidden_dim, seed=params.seed,
    )


def test_init_deterministic():
    a = init_scorer(4, 8, 0)
    b = init_scorer(4, 8, 0)
    assert np.array_equal(flatten_params(a), flatten_params(b))


def test_init_seed_sensitivity():
    a = init_scorer(4, 8, 0)
    b = init_scorer(4, 8, 1)
    assert not np.array_equal(flatten_params(a), flatten_params(b))


def test_init_validation():
    with pytest.raises(ValidationError):
        init_scorer(0, 8, 0)
    with pytest.raises(ValidationError):
        init_scorer(4, 0, 0)


def test_init_structure():
    p = init_scorer(5, 8, 3)
    assert len(p.layers) == 4
    assert p.layers[0].w.shape == (5, 8)
    assert all(l.w.shape == (8, 8) for l in p.layers[1:])
    for l in p.layers:
        assert np.all(l.att == 0) and np.all(l.b == 0)
    assert p.mlp_w1.shape == (16, 8) and p.mlp_w2.shape == (8, 2)


def test_forward_ranges():
    rng = np.random.default_rng(0)
    g, X = random_graph(rng, 30, 4, 5)
    ld = forward(init_scorer(4, 8, 0), g, X)
    assert (ld.p > 0).all() and (ld.p < 1).all()
    assert (ld.e > -1).all() and (ld.e < 1).all()
    assert (ld.d >= -1).all() and (ld.d <= 1).all()
    assert np.array_equal(ld.e, 2 * ld.p - 1)


def test_forward_identical_pair_symmetry():
    X = np.array([[0.6, 0.8], [0.6, 0.8]])
    g = build_knn_graph(X, 1)
    rng = np.random.default_rng(5)
    params = init_scorer(2, 6, 2)
    # arbitrary nonzero parameters, identical inputs still force p01 == p10
    params = unflatten_params(params, rng.standard_normal(flatten_params(params).size))
    ld = forward(params, g, X)
    assert ld.p[0, 0] == pytest.approx(ld.p[1, 0], abs=1e-15)


def test_forward_zeroed_mlp_density_zero():
    rng = np.random.default_rng(1)
    g, X = random_graph(rng, 20, 4, 4)
    ld = forward(zero_mlp(init_scorer(4, 8, 0)), g, X)
    assert np.all(ld.p == 0.5)
    assert np.all(ld.d == 0.0)


def test_forward_dim_mismatch():
    rng = np.random.default_rng(2)
    g, X = random_graph(rng, 10, 4, 3)
    with pytest.raises(ValidationError):
        forward(init_scorer(5, 8, 0), g, X)


def test_density_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(5, 40))
        k = int(rng.integers(1, min(8, n - 1) + 1))
        g, X = random_graph(rng, n, 4, k)
        ld = forward(init_scorer(4, 8, 0), g, X)
        assert np.abs(ld.d - density_oracle(g, ld.p)).max() <= 1e-12


def test_ground_truth_density_examples():
    # handcrafted graph: node 0 with neighbors of known labels/affinities
    g, _ = random_graph(np.random.default_rng(4), 4, 3, 3)
    g.neighbors[0] = [1, 2, 3]
    g.affinities[0] = [0.9, 0.8, 0.5]
    labels = np.array([0, 0, 1, 0])
    assert ground_truth_density(g, labels, 0) == pytest.approx((0.9 - 0.8 + 0.5) / 3)
    g.affinities[0] = [1.0, 1.0, 1.0]
    labels = np.array([0, 0, 0, 0])
    assert ground_truth_density(g, labels, 0) == pytest.approx(1.0)
    labels = np.array([0, 1, 1, 1])
    g.affinities[0] = [0.9, 0.8, 0.5]
    assert ground_truth_density(g, labels, 0) == pytest.approx(-(0.9 + 0.8 + 0.5) / 3)


def test_ground_truth_density_unlabeled_neighbor():
    g, _ = random_graph(np.random.default_rng(5), 4, 3, 3)
    labels = np.array([0, -1, 0, 0])
    node = int(np.flatnonzero((g.neighbors == 1).any(axis=1))[0])
    if labels[node] < 0:
        labels[node] = 0
    with pytest.raises(ValidationError):
        ground_truth_density(g, labels, node)


def test_loss_uninformative_is_ln2():
    rng = np.random.default_rng(6)
    g, X = random_graph(rng, 15, 4, 4)
    labels = rng.integers(0, 2, 15)
    loss, _ = scorer_loss(zero_mlp(init_scorer(4, 8, 0)), g, X, labels)
    assert loss == pytest.approx(np.log(2), abs=1e-12)


def test_loss_perfect_prediction_limits():
    rng = np.random.default_rng(7)
    g, X = random_graph(rng, 15, 4, 4)
    params = init_scorer(4, 8, 0)
    all_same = np.zeros(15, dtype=int)
    loss, _ = scorer_loss(biased_mlp(params, 40.0), g, X, all_same)
    assert loss < 1e-12
    all_diff = np.arange(15)
    loss, _ = scorer_loss(biased_mlp(params, -40.0), g, X, all_diff)
    assert loss < 1e-12


def test_loss_requires_labeled_edge():
    rng = np.random.default_rng(8)
    g, X = random_graph(rng, 10, 4, 3)
    with pytest.raises(ValidationError):
        scorer_loss(init_scorer(4, 8, 0), g, X, np.full(10, -1))


def draw_params_away_from_kinks(template, g, X, rng, scale=0.6):
    """Random parameters whose activations sit clear of the LeakyReLU/ELU
    kinks: central differences are only a valid oracle where the function is
    differentiable within the step window."""
    flat = flatten_params(template)
    for _ in range(200):
        vec = rng.standard_normal(flat.size) * scale
        params = unflatten_params(template, vec)
        cache = _forward_cache(params, g, X)
        margin = min(
            min(np.abs(lc["pre_raw"]).min(), np.abs(lc["v"]).min())
            for lc in cache["layers"]
        )
        if margin > 1e-4:
            return vec, params
    raise AssertionError("could not find a kink-free parameter draw")


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    n, d, h, k = 20, 4, 6, 5
    X = rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    g = build_knn_graph(X, k)
    labels = rng.integers(0, 3, n)
    labels[rng.random(n) < 0.3] = -1
    template = init_scorer(d, h, 0)
    step = 1e-5
    for trial in range(6):
        vec, params = draw_params_away_from_kinks(template, g, X, rng)
        _, grads = scorer_loss(params, g, X, labels)
        ga = flatten_params(grads)
        gf = np.zeros_like(vec)
        for i in range(vec.size):
            vp = vec.copy(); vp[i] += step
            vm = vec.copy(); vm[i] -= step
            lp, _ = scorer_loss(unflatten_params(template, vp), g, X, labels,
                                compute_grad=False)
            lm, _ = scorer_loss(unflatten_params(template, vm), g, X, labels,
                                compute_grad=False)
            gf[i] = (lp - lm) / (2 * step)
        rel = np.abs(ga - gf) / np.maximum(np.maximum(np.abs(ga), np.abs(gf)), 1e-5)
        assert rel.max() <= 1e-4, f"trial {trial}: {rel.max()}"


def test_train_descends():
    rng = np.random.default_rng(10)
    centers = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    X = np.concatenate([
        centers[0] + 0.05 * rng.standard_normal((20, 3)),
        centers[1] + 0.05 * rng.standard_normal((20, 3)),
    ])
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    labels = np.repeat([0, 1], 20)
    g = build_knn_graph(X, 25)  # wide enough for cross-cluster edges
    params = init_scorer(3, 8, 0)
    _, trace = train_scorer(params, g, X, labels, 0.1, 200)
    assert trace[-1] < trace[0]
    assert trace[-1] < 0.1


def test_train_validation_and_determinism():
    rng = np.random.default_rng(11)
    g, X = random_graph(rng, 12, 4, 3)
    labels = rng.integers(0, 2, 12)
    params = init_scorer(4, 8, 0)
    with pytest.raises(ValidationError):
        train_scorer(params, g, X, labels, 0.1, 0)
    with pytest.raises(ValidationError):
        train_scorer(params, g, X, labels, 0.0, 5)
    _, t1 = train_scorer(params, g, X, labels, 0.1, 20)
    _, t2 = train_scorer(params, g, X, labels, 0.1, 20)
    assert t1 == t2


def test_train_divergence_error():
    rng = np.random.default_rng(12)
    g, X = random_graph(rng, 12, 4, 3)
    labels = rng.integers(0, 2, 12)
    params = init_scorer(4, 8, 0)
    with pytest.raises(NumericError) as exc:
        train_scorer(params, g, X, labels, 1e160, 10)
    assert "step" in str(exc.value)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    params = init_scorer(6, 8, 3)
    rng = np.random.default_rng(13)
    params = unflatten_params(params, rng.standard_normal(flatten_params(params).size))
    path = tmp_path / "scorer.bin"
    save_scorer(params, path)
    back = load_scorer(path)
    for (na, a), (nb, b) in zip(param_items(params), param_items(back)):
        assert na == nb
        assert a.tobytes() == b.tobytes()
    assert (back.input_dim, back.hidden_dim, back.seed) == (6, 8, 3)
    save_scorer(back, tmp_path / "scorer2.bin")
    assert (tmp_path / "scorer.bin").read_bytes() == (tmp_path / "scorer2.bin").read_bytes()


def test_permutation_equivariance():
    rng = np.random.default_rng(14)
    n, d, k = 18, 4, 4
    g, X = random_graph(rng, n, d, k)
    params = unflatten_params(init_scorer(d, 6, 0),
                              rng.standard_normal(flatten_params(init_scorer(d, 6, 0)).size))
    ld = forward(params, g, X)

    perm = rng.permutation(n)  # perm[i] = new index of old node i
    inv = np.argsort(perm)
    from graphood.knn import AffinityGraph
    g2 = AffinityGraph(n=n, k=k,
                       neighbors=perm[g.neighbors[inv]],
                       affinities=g.affinities[inv].copy(),
                       level=g.level)
    ld2 = forward(params, g2, X[inv])
    assert np.allclose(ld2.d, ld.d[inv], atol=1e-12)
    assert np.allclose(ld2.p, ld.p[inv], atol=1e-12)
