import numpy as np
import pytest

from slatelab.simulator import (
    Environment,
    ItemCatalog,
    SimConfig,
    UserState,
    attractiveness_vector,
    click_probabilities,
    examination,
    examination_vector,
    generate_item_catalog,
    relevance,
    relevance_scores,
    sample_user,
    step,
    validate_slate,
)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


class ScriptRng:
    """Stand-in rng whose random(k) returns pre-scripted uniform draws.

    0.0 forces a click at that slot (every probability beats it), 1.0 forces
    no click.
    """

    def __init__(self, rows):
        self.rows = [np.asarray(r, dtype=np.float64) for r in rows]
        self.calls = 0

    def random(self, n):
        row = self.rows[self.calls]
        self.calls += 1
        assert row.shape == (n,)
        return row


def pure_topic_catalog(cfg, topics):
    """Catalog whose item i sits entirely in topic block topics[i]."""
    emb = np.zeros((len(topics), cfg.embed_dim))
    for i, t in enumerate(topics):
        emb[i, t * cfg.topic_dim] = 1.0
    return ItemCatalog(embeddings=emb, main_topic=np.asarray(topics))


def uniform_user(cfg):
    e = np.ones(cfg.embed_dim)
    return UserState(base_embedding=e / np.linalg.norm(e))


# --- embeddings ---------------------------------------------------------------

def test_catalog_rows_unit_norm():
    cfg = SimConfig(num_items=200)
    cat = generate_item_catalog(cfg, seed=0)
    norms = np.linalg.norm(cat.embeddings, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-9)


def test_catalog_seeded_determinism():
    cfg = SimConfig(num_items=50)
    a = generate_item_catalog(cfg, seed=3)
    b = generate_item_catalog(cfg, seed=3)
    assert np.array_equal(a.embeddings, b.embeddings)
    assert np.array_equal(a.main_topic, b.main_topic)
    c = generate_item_catalog(cfg, seed=4)
    assert not np.array_equal(a.embeddings, c.embeddings)


def test_focused_variant_is_peakier():
    base = dict(num_items=1000)
    diffuse = generate_item_catalog(SimConfig(**base), seed=1)
    focused = generate_item_catalog(SimConfig(embedding_variant="focused", **base), seed=1)

    def mean_max_topic_mass(cat, cfg):
        blocks = cat.embeddings.reshape(cfg.num_items, cfg.num_topics, cfg.topic_dim)
        mass = (blocks**2).sum(axis=2)
        return float(np.mean(mass.max(axis=1)))

    cfg = SimConfig(**base)
    assert mean_max_topic_mass(focused, cfg) > mean_max_topic_mass(diffuse, cfg)


def test_main_topic_matches_block_norms():
    cfg = SimConfig(num_items=30)
    cat = generate_item_catalog(cfg, seed=7)
    blocks = cat.embeddings.reshape(cfg.num_items, cfg.num_topics, cfg.topic_dim)
    want = np.argmax(np.linalg.norm(blocks, axis=2), axis=1)
    np.testing.assert_array_equal(cat.main_topic, want)


def test_embedding_components_keep_sign():
    cfg = SimConfig(num_items=500)
    cat = generate_item_catalog(cfg, seed=2)
    assert (cat.embeddings < 0).any()


def test_sample_user_fresh_state():
    cfg = SimConfig()
    rng = np.random.default_rng(0)
    u = sample_user(cfg, rng)
    assert np.linalg.norm(u.base_embedding) == pytest.approx(1.0, abs=1e-9)
    assert u.bored_topics == {}
    assert len(u.click_history) == 0
    assert u.turn_index == 0
    v = sample_user(cfg, np.random.default_rng(1))
    assert not np.array_equal(u.base_embedding, v.base_embedding)


# --- relevance ----------------------------------------------------------------

def test_relevance_half_at_offset():
    cfg = SimConfig(num_items=1, slate_size=1)
    # Item along axis 0; user scaled so the dot equals the sigmoid offset.
    cat = pure_topic_catalog(cfg, [0])
    e = np.zeros(cfg.embed_dim)
    e[0] = cfg.sigmoid_offset
    user = UserState(base_embedding=e)
    assert relevance(user, 0, cat, cfg) == pytest.approx(0.5, abs=1e-12)


def test_relevance_at_perfect_match():
    cfg = SimConfig(num_items=1, slate_size=1)
    cat = pure_topic_catalog(cfg, [0])
    user = UserState(base_embedding=cat.embeddings[0].copy())
    want = _sigmoid((1.0 - 0.28) * 5.0)
    assert relevance(user, 0, cat, cfg) == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.973, abs=5e-4)


def test_relevance_fully_masked_user():
    cfg = SimConfig(num_items=1, slate_size=1)
    cat = pure_topic_catalog(cfg, [0])
    user = uniform_user(cfg)
    user.bored_topics = {t: 3 for t in range(cfg.num_topics)}
    want = _sigmoid(-0.28 * 5.0)
    assert relevance(user, 0, cat, cfg) == pytest.approx(want, abs=1e-12)


def test_relevance_scores_match_scalar():
    cfg = SimConfig(num_items=40)
    cat = generate_item_catalog(cfg, seed=5)
    user = sample_user(cfg, np.random.default_rng(5))
    user.bored_topics = {2: 1}
    scores = relevance_scores(user, cat, cfg)
    for i in (0, 7, 39):
        assert scores[i] == pytest.approx(relevance(user, i, cat, cfg), abs=1e-12)


# --- examination ---------------------------------------------------------------

def test_examination_topdown_rank_one():
    cfg = SimConfig(click_model="TopDown")
    assert examination(1, cfg) == pytest.approx(0.85, abs=1e-12)


def test_examination_mixed_value():
    cfg = SimConfig(click_model="Mixed")
    want = 0.5 * 0.85 + 0.5 * 0.85**10
    assert examination(1, cfg) == pytest.approx(want, abs=1e-12)
    assert want == pytest.approx(0.5234, abs=5e-5)


def test_examination_mixed_symmetry():
    cfg = SimConfig(click_model="Mixed")
    for r in range(1, cfg.slate_size + 1):
        assert examination(r, cfg) == pytest.approx(
            examination(cfg.slate_size + 1 - r, cfg), abs=1e-15)


def test_examination_topdown_strictly_decreasing():
    cfg = SimConfig(click_model="TopDown")
    e = examination_vector(cfg)
    assert (np.diff(e) < 0).all()
    assert ((e > 0) & (e < 1)).all()


def test_examination_rank_bounds():
    cfg = SimConfig()
    with pytest.raises(ValueError):
        examination(0, cfg)
    with pytest.raises(ValueError):
        examination(cfg.slate_size + 1, cfg)


# --- attractiveness and click models --------------------------------------------

def test_mixed_attractiveness_equals_relevance():
    cfg = SimConfig(num_items=30, click_model="Mixed")
    cat = generate_item_catalog(cfg, seed=11)
    user = sample_user(cfg, np.random.default_rng(11))
    slate = np.arange(10)
    a = attractiveness_vector(user, slate, cat, cfg)
    want = [relevance(user, i, cat, cfg) for i in slate]
    np.testing.assert_allclose(a, want, atol=1e-12)


def test_divpen_triggers_on_fifth_same_topic_item():
    cfg = SimConfig(num_items=10, click_model="DivPen")
    cat = pure_topic_catalog(cfg, [3, 3, 3, 3, 3, 1, 2, 4, 5, 6])
    user = uniform_user(cfg)
    slate = np.arange(10)
    mixed = SimConfig(num_items=10, click_model="Mixed")
    base = attractiveness_vector(user, slate, cat, mixed)
    penalized = attractiveness_vector(user, slate, cat, cfg)
    np.testing.assert_allclose(penalized, base / 3.0, atol=1e-12)


def test_divpen_inactive_at_four_per_topic():
    cfg = SimConfig(num_items=10, click_model="DivPen")
    cat = pure_topic_catalog(cfg, [3, 3, 3, 3, 1, 1, 2, 4, 5, 6])
    user = uniform_user(cfg)
    slate = np.arange(10)
    mixed = SimConfig(num_items=10, click_model="Mixed")
    np.testing.assert_allclose(attractiveness_vector(user, slate, cat, cfg),
                               attractiveness_vector(user, slate, cat, mixed),
                               atol=1e-12)


def test_click_probabilities_in_unit_interval():
    cfg = SimConfig(num_items=50, click_model="Mixed")
    cat = generate_item_catalog(cfg, seed=13)
    user = sample_user(cfg, np.random.default_rng(13))
    p = click_probabilities(user, np.arange(10), cat, cfg)
    assert ((p > 0) & (p < 1)).all()


@pytest.mark.parametrize("model", ["TopDown", "Mixed", "DivPen"])
def test_click_rate_calibration(model):
    """Frozen user, fixed slate: empirical per-slot click rate matches A*E."""
    cfg = SimConfig(num_items=100, click_model=model)
    cat = generate_item_catalog(cfg, seed=17)
    user = sample_user(cfg, np.random.default_rng(17))
    slate = np.arange(10)
    probs = click_probabilities(user, slate, cat, cfg)
    n = 100_000
    draws = np.random.default_rng(99).random((n, cfg.slate_size)) < probs
    rate = draws.mean(axis=0)
    se = np.sqrt(probs * (1 - probs) / n)
    assert (np.abs(rate - probs) <= 3 * se).all()


# --- step dynamics ---------------------------------------------------------------

def small_cfg(**kw):
    kw.setdefault("num_items", 12)
    kw.setdefault("slate_size", 5)
    kw.setdefault("episode_length", 30)
    return SimConfig(**kw)


def test_no_clicks_leaves_user_untouched():
    cfg = small_cfg()
    cat = generate_item_catalog(cfg, seed=1)
    user = sample_user(cfg, np.random.default_rng(1))
    before = user.base_embedding.copy()
    res = step(user, np.arange(5), cat, cfg, ScriptRng([np.ones(5)]))
    assert res.reward == 0
    assert not res.clicks.any()
    assert np.array_equal(user.base_embedding, before)
    assert user.turn_index == 1


def test_click_applies_influence_in_slate_order():
    cfg = small_cfg(omega=0.9)
    cat = generate_item_catalog(cfg, seed=2)
    user = sample_user(cfg, np.random.default_rng(2))
    e0 = user.base_embedding.copy()
    slate = np.array([3, 7, 1, 0, 2])
    step(user, slate, cat, cfg, ScriptRng([[0.0, 1.0, 0.0, 1.0, 1.0]]))
    want = 0.9 * e0 + 0.1 * cat.embeddings[3]
    want = 0.9 * want + 0.1 * cat.embeddings[1]
    np.testing.assert_allclose(user.base_embedding, want, atol=1e-12)
    assert list(user.click_history) == [3, 1]


def test_influence_preserves_boundedness():
    cfg = small_cfg(episode_length=200)
    cat = generate_item_catalog(cfg, seed=3)
    user = sample_user(cfg, np.random.default_rng(3))
    rng = np.random.default_rng(30)
    for _ in range(200):
        slate = rng.choice(cfg.num_items, size=5, replace=False)
        step(user, slate, cat, cfg, rng)
        assert np.linalg.norm(user.base_embedding) <= 1.0 + 1e-12


def test_duplicate_slots_click_independently():
    cfg = small_cfg()
    cat = generate_item_catalog(cfg, seed=4)
    user = sample_user(cfg, np.random.default_rng(4))
    slate = np.array([2, 2, 2, 2, 2])
    res = step(user, slate, cat, cfg, ScriptRng([[0.0, 1.0, 0.0, 1.0, 0.0]]))
    np.testing.assert_array_equal(res.clicks, [1, 0, 1, 0, 1])
    assert res.reward == 3


def test_validate_slate_errors():
    cfg = small_cfg()
    with pytest.raises(ValueError):
        validate_slate(np.arange(4), cfg)
    with pytest.raises(ValueError):
        validate_slate(np.array([0, 1, 2, 3, 12]), cfg)
    out = validate_slate([0, 0, 1, 1, 2], cfg)
    assert out.dtype == np.int64


# --- boredom -----------------------------------------------------------------

def test_boredom_five_turn_mask_then_recovery():
    """Five same-topic clicks trigger a 5-turn mask; pushing them out of the
    history window lets the topic recover exactly on the sixth turn."""
    cfg = small_cfg(num_items=12, slate_size=5, episode_length=30)
    # Items 0-4 pure topic 0, items 5-10 pure topics 1-6, item 11 topic 7.
    cat = pure_topic_catalog(cfg, [0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7])
    user = uniform_user(cfg)
    masked_rel = _sigmoid(-cfg.sigmoid_offset * cfg.sigmoid_slope)

    # Turn 1: click all five topic-0 items.
    step(user, np.arange(5), cat, cfg, ScriptRng([np.zeros(5)]))
    assert user.bored_topics == {0: 5}

    # Five masked turns; two off-topic clicks per turn age the history,
    # rotated so no filler topic itself accumulates five clicks.
    filler = np.array([5, 6, 7, 8, 9])
    rows = [[0, 0, 1, 1, 1], [1, 1, 0, 0, 1], [0, 1, 1, 1, 0],
            [1, 0, 0, 1, 1], [1, 1, 1, 0, 0]]
    for row in rows:
        assert relevance(user, 0, cat, cfg) == pytest.approx(masked_rel, abs=1e-12)
        step(user, filler, cat, cfg, ScriptRng([np.asarray(row, dtype=float)]))
    # Counter expired and the window now holds at most four topic-0 clicks.
    assert user.bored_topics == {}
    assert relevance(user, 0, cat, cfg) > masked_rel


def test_boredom_counter_not_refreshed_while_active():
    cfg = small_cfg()
    cat = pure_topic_catalog(cfg, [0] * 12)
    user = uniform_user(cfg)
    step(user, np.arange(5), cat, cfg, ScriptRng([np.zeros(5)]))
    assert user.bored_topics == {0: 5}
    # Keep clicking the bored topic: history stays saturated but the counter
    # must keep counting down instead of resetting.
    step(user, np.arange(5), cat, cfg, ScriptRng([np.zeros(5)]))
    assert user.bored_topics == {0: 4}
    step(user, np.arange(5), cat, cfg, ScriptRng([[0.0, 1.0, 1.0, 1.0, 1.0]]))
    assert user.bored_topics == {0: 3}


def test_boredom_retriggers_if_history_still_saturated():
    cfg = small_cfg()
    cat = pure_topic_catalog(cfg, [0] * 12)
    user = uniform_user(cfg)
    step(user, np.arange(5), cat, cfg, ScriptRng([np.zeros(5)]))
    # No further clicks: the five topic-0 clicks stay in the window, so on
    # expiry the topic is immediately bored again.
    for _ in range(5):
        step(user, np.arange(5), cat, cfg, ScriptRng([np.ones(5)]))
    assert user.bored_topics == {0: 5}


def test_bored_values_stay_in_range():
    cfg = small_cfg()
    cat = generate_item_catalog(cfg, seed=8)
    user = sample_user(cfg, np.random.default_rng(8))
    rng = np.random.default_rng(80)
    for _ in range(cfg.episode_length):
        step(user, rng.choice(cfg.num_items, 5, replace=False), cat, cfg, rng)
        for counter in user.bored_topics.values():
            assert 1 <= counter <= cfg.boredom_duration


# --- environment wrapper -------------------------------------------------------

def test_episode_replay_bit_identical():
    cfg = small_cfg(episode_length=20)
    cat = generate_item_catalog(cfg, seed=21)
    slates = np.random.default_rng(0).choice(cfg.num_items, size=(20, 5))

    def run():
        env = Environment(cfg, cat)
        env.reset(seed=5)
        out = []
        for t in range(20):
            res = env.step(slates[t])
            out.append((res.clicks.copy(), res.reward, res.done))
        return out

    a, b = run(), run()
    for (ca, ra, da), (cb, rb, db) in zip(a, b):
        assert np.array_equal(ca, cb) and ra == rb and da == db
    assert a[-1][2] is True


def test_env_guards():
    cfg = small_cfg(episode_length=2)
    cat = generate_item_catalog(cfg, seed=1)
    env = Environment(cfg, cat)
    with pytest.raises(RuntimeError):
        env.step(np.arange(5))
    env.reset(seed=0)
    env.step(np.arange(5))
    env.step(np.arange(5))
    assert env.done
    with pytest.raises(RuntimeError):
        env.step(np.arange(5))


def test_disclosed_mode_gates_accessors():
    cfg = small_cfg()
    cat = generate_item_catalog(cfg, seed=2)
    env = Environment(cfg, cat)
    with pytest.raises(PermissionError):
        env.disclosed_item_embeddings()
    denv = Environment(cfg, cat, disclosed=True)
    denv.reset(seed=0)
    assert denv.disclosed_item_embeddings().shape == (12, cfg.embed_dim)
    scores = denv.disclosed_relevance()
    assert scores.shape == (12,)
    assert ((scores > 0) & (scores < 1)).all()


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(num_items=5, slate_size=10)
    with pytest.raises(ValueError):
        SimConfig(click_model="Cascade")
    with pytest.raises(ValueError):
        SimConfig(embedding_variant="sharp")
    assert SimConfig(click_model="TopDown").nu == 1.0
    assert SimConfig(click_model="Mixed").nu == 0.5
    assert SimConfig(click_model="DivPen").nu == 0.5
    assert SimConfig().embed_dim == 20
