import numpy as np
import pytest

from attnlab import (
    AttentionConfig,
    CapacityError,
    ConfigurationError,
    DimensionError,
    Mechanism,
    NumericalError,
    RngSpec,
    UnsupportedMechanismError,
    UnsupportedModeError,
    append_token,
    decode_explicit,
    decode_factored,
    empty_cache,
    equivalence_report,
    init_weights,
    prefill,
    set_alloc_hook,
)


def cfg(mechanism, **kw):
    base = dict(d=48, H=4, d_h=12)
    base.update(kw)
    return AttentionConfig(mechanism=mechanism, **base)


class EventLog:
    def __init__(self):
        self.events = []

    def __call__(self, tag, shape):
        self.events.append((tag, shape))

    def drain(self):
        out, self.events = self.events, []
        return out


@pytest.fixture
def log():
    logger = EventLog()
    prev = set_alloc_hook(logger)
    yield logger
    set_alloc_hook(prev)


@pytest.mark.parametrize("mechanism,kw,fields", [
    (Mechanism.MHA, {}, ("k", "v")),
    (Mechanism.MQA, {}, ("k_shared", "v_shared")),
    (Mechanism.GQA, {"G": 2}, ("k", "v")),
    (Mechanism.MLA, {"d_c": 10}, ("z",)),
    (Mechanism.LRKV, {"r": 5}, ("k_shared", "v_shared", "rk", "rv")),
])
def test_empty_cache_allocates_the_right_streams(mechanism, kw, fields):
    config = cfg(mechanism, **kw)
    cache = empty_cache(config, capacity=6, dtype=np.float32)
    assert cache.length == 0 and cache.capacity == 6
    assert cache.dtype == np.float32
    for f in fields:
        assert getattr(cache, f) is not None, f
    expected = {
        Mechanism.MHA: 2 * config.H * 6 * config.d_h,
        Mechanism.MQA: 2 * 6 * config.d_h,
        Mechanism.GQA: 2 * config.G * 6 * config.d_h,
        Mechanism.MLA: 6 * config.d_c,
        Mechanism.LRKV: 2 * 6 * (config.d_h + config.H * config.r),
    }[mechanism]
    assert cache.payload_nbytes() == expected * 4


def test_append_validates_shape_and_capacity():
    config = cfg(Mechanism.MQA)
    w = init_weights(config, RngSpec(seed=0))
    cache = empty_cache(config, capacity=1)
    with pytest.raises(DimensionError):
        append_token(cache, w, config, np.zeros(config.d + 1))
    append_token(cache, w, config, np.zeros(config.d))
    with pytest.raises(CapacityError):
        append_token(cache, w, config, np.zeros(config.d))


@pytest.mark.parametrize("mechanism,kw", [
    (Mechanism.MHA, {}),
    (Mechanism.GQA, {"G": 2}),
    (Mechanism.MLA, {"d_c": 10}),
    (Mechanism.LRKV, {"r": 5}),
])
def test_prefill_is_bitwise_identical_to_appends(mechanism, kw):
    config = cfg(mechanism, **kw)
    w = init_weights(config, RngSpec(seed=1))
    X = np.random.default_rng(2).standard_normal((11, config.d))
    a = prefill(w, config, X)
    b = empty_cache(config, capacity=11, dtype=X.dtype)
    for row in X:
        append_token(b, w, config, row)
    for field in ("k", "v", "k_shared", "v_shared", "z", "rk", "rv"):
        fa, fb = getattr(a, field), getattr(b, field)
        assert (fa is None) == (fb is None)
        if fa is not None:
            assert np.array_equal(fa, fb), field


def test_prefill_capacity_and_empty_prompt():
    config = cfg(Mechanism.MQA)
    w = init_weights(config, RngSpec(seed=0))
    X = np.zeros((4, config.d))
    with pytest.raises(CapacityError):
        prefill(w, config, X, capacity=3)
    empty = prefill(w, config, X[:0])
    assert empty.length == 0 and empty.capacity == 0
    roomy = prefill(w, config, X[:0], capacity=8)
    assert roomy.capacity == 8


def test_prefill_rejects_bad_prompt_shape():
    config = cfg(Mechanism.MQA)
    w = init_weights(config, RngSpec(seed=0))
    with pytest.raises(DimensionError):
        prefill(w, config, np.zeros((4, config.d + 2)))


def test_decode_factored_rejections_leave_cache_untouched():
    mha = cfg(Mechanism.MHA)
    w = init_weights(mha, RngSpec(seed=0))
    cache = empty_cache(mha, capacity=4)
    with pytest.raises(UnsupportedMechanismError):
        decode_factored(cache, w, mha, np.zeros(mha.d))
    assert cache.length == 0  # rejected before any state was written

    normed = cfg(Mechanism.LRKV, r=5, qk_norm=True)
    wn = init_weights(normed, RngSpec(seed=0))
    cache_n = empty_cache(normed, capacity=4)
    with pytest.raises(UnsupportedModeError):
        decode_factored(cache_n, wn, normed, np.zeros(normed.d))
    assert cache_n.length == 0


def test_decode_raises_on_nonfinite_input():
    config = cfg(Mechanism.MQA)
    w = init_weights(config, RngSpec(seed=0))
    cache = empty_cache(config, capacity=4)
    x = np.zeros(config.d)
    x[0] = np.inf
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericalError):
            decode_explicit(cache, w, config, x)


def test_factored_transients_are_small_vectors(log):
    """The factored decode path must never build a (t, d_h) matrix."""
    config = cfg(Mechanism.LRKV, r=5)
    w = init_weights(config, RngSpec(seed=3))
    X = np.random.default_rng(4).standard_normal((10, config.d))
    cache = prefill(w, config, X[:9], capacity=10)
    log.drain()
    decode_factored(cache, w, config, X[9])
    events = log.drain()
    assert events, "hook saw no traffic"
    t = cache.length
    allowed = {t, config.r, config.d_h}
    for tag, shape in events:
        assert len(shape) == 1, f"{tag} allocated {shape}"
        assert shape[0] in allowed, f"{tag} allocated {shape}"
        assert not tag.startswith("explicit."), tag


def test_factored_mla_transients_are_small_vectors(log):
    config = cfg(Mechanism.MLA, d_c=10)
    w = init_weights(config, RngSpec(seed=5))
    X = np.random.default_rng(6).standard_normal((8, config.d))
    cache = prefill(w, config, X[:7], capacity=8)
    log.drain()
    decode_factored(cache, w, config, X[7])
    t = cache.length
    allowed = {t, config.d_c, config.d_h}
    for tag, shape in log.drain():
        assert len(shape) == 1 and shape[0] in allowed, (tag, shape)


def test_explicit_path_visibly_materializes_per_head(log):
    """Positive control: the hook does see (t, d_h) buffers when they exist."""
    config = cfg(Mechanism.LRKV, r=5)
    w = init_weights(config, RngSpec(seed=3))
    X = np.random.default_rng(4).standard_normal((6, config.d))
    cache = prefill(w, config, X[:5], capacity=6)
    log.drain()
    decode_explicit(cache, w, config, X[5])
    shapes = [shape for tag, shape in log.drain() if tag == "explicit.k_head"]
    assert shapes == [(6, config.d_h)] * config.H


def test_factored_non_t_traffic_is_length_independent(log):
    """Per-step factor work must not grow with the cache length."""
    config = cfg(Mechanism.LRKV, r=5)
    w = init_weights(config, RngSpec(seed=7))
    totals = []
    for T in (6, 24):
        X = np.random.default_rng(8).standard_normal((T, config.d))
        cache = prefill(w, config, X[:-1], capacity=T)
        log.drain()
        decode_factored(cache, w, config, X[-1])
        events = log.drain()
        totals.append(sum(s[0] for tag, s in events if s[0] != cache.length))
    assert totals[0] == totals[1]


def test_set_alloc_hook_returns_previous():
    first = EventLog()
    prev = set_alloc_hook(first)
    try:
        second = EventLog()
        assert set_alloc_hook(second) is first
    finally:
        set_alloc_hook(prev)


def test_equivalence_report_rows_and_validation():
    config = cfg(Mechanism.LRKV, r=5)
    with pytest.raises(ConfigurationError):
        equivalence_report(config, RngSpec(seed=0), T=0, trials=1)
    with pytest.raises(ConfigurationError):
        equivalence_report(config, RngSpec(seed=0), T=4, trials=0)
    rows = equivalence_report(config, RngSpec(seed=0), T=12, trials=2)
    assert len(rows) == 2
    for row in rows:
        assert row["mechanism"] == "lrkv" and row["dtype"] == "float64"
        assert row["max_logit_diff"] <= 1e-9
        assert row["max_out_diff"] <= 1e-9
        assert 0 < row["factored_elems_touched"] < row["explicit_elems_touched"]


def test_equivalence_report_marks_unfactorable_mechanisms():
    rows = equivalence_report(cfg(Mechanism.GQA, G=2), RngSpec(seed=0), T=6, trials=1)
    (row,) = rows
    assert row["max_logit_diff"] is None
    assert row["factored_elems_touched"] is None
    assert row["explicit_elems_touched"] > 0
