"""Episode store: sampling contracts, eviction, and the on-disk archive."""

import numpy as np
import pytest

from dreaming.replay import (BufferNotReady, Episode, EpisodeStore, load_episode,
                             normalize_images, save_episode)


def make_episode(length, seed=0, action_dim=2):
    rng = np.random.default_rng(seed)
    return Episode(
        images=rng.integers(0, 256, size=(length, 72, 72, 3), dtype=np.uint8),
        actions=rng.uniform(-1, 1, size=(length, action_dim)).astype(np.float32),
        rewards=rng.uniform(0, 1, size=length).astype(np.float32),
        terminals=np.zeros(length, dtype=bool),
        ground_truth=rng.normal(size=(length, 6)),
        task="dot_reach", seed=seed,
    )


def test_single_episode_exact_length_is_the_only_sample():
    store = EpisodeStore(capacity=100)
    ep = make_episode(6)
    store.add_episode(ep)
    batch = store.sample_batch(3, 6, np.random.default_rng(0), discount=0.9)
    for b in range(3):
        assert np.array_equal(batch.images[b], normalize_images(ep.images))
        assert np.array_equal(batch.actions[b], ep.actions)


def test_sampled_slices_are_bit_exact():
    store = EpisodeStore(capacity=1000)
    ep = make_episode(40, seed=3)
    store.add_episode(ep)
    rng = np.random.default_rng(5)
    batch = store.sample_batch(8, 10, rng, discount=0.99)
    for b in range(8):
        # locate the sampled window by matching the reward stream
        hits = [off for off in range(31)
                if np.array_equal(ep.rewards[off:off + 10], batch.rewards[b])]
        assert len(hits) >= 1
        off = hits[0]
        assert np.array_equal(batch.actions[b], ep.actions[off:off + 10])
        assert np.array_equal(batch.images[b], normalize_images(ep.images[off:off + 10]))
        assert np.allclose(batch.discounts[b], 0.99)


def test_images_normalized_to_unit_interval_around_zero():
    store = EpisodeStore(capacity=100)
    store.add_episode(make_episode(8))
    batch = store.sample_batch(2, 8, np.random.default_rng(1))
    assert batch.images.dtype == np.float32
    assert batch.images.min() >= -0.5 and batch.images.max() <= 0.5


def test_offset_distribution_uniform():
    store = EpisodeStore(capacity=1000)
    ep = make_episode(19)  # 10 possible offsets for T=10
    store.add_episode(ep)
    rng = np.random.default_rng(7)
    n, chunk = 10_000, 250
    counts = np.zeros(10)
    starts = {float(ep.rewards[off]): off for off in range(10)}
    assert len(starts) == 10
    for _ in range(n // chunk):
        batch = store.sample_batch(chunk, 10, rng)
        for b in range(chunk):
            counts[starts[float(batch.rewards[b][0])]] += 1
    expected = n / 10
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    from scipy.stats import chi2 as chi2_dist
    assert chi2_dist.sf(chi2, df=9) > 0.01


def test_never_crosses_episode_boundaries():
    store = EpisodeStore(capacity=1000)
    ep_a = make_episode(12, seed=1)
    ep_b = make_episode(12, seed=2)
    ep_a.rewards[:] = 0.0
    ep_b.rewards[:] = 1.0
    store.add_episode(ep_a)
    store.add_episode(ep_b)
    batch = store.sample_batch(64, 8, np.random.default_rng(3))
    for b in range(64):
        distinct = np.unique(batch.rewards[b])
        assert len(distinct) == 1  # all-zero or all-one, never mixed


def test_fifo_eviction_preserves_capacity_and_whole_episodes():
    store = EpisodeStore(capacity=25)
    for seed in range(5):
        store.add_episode(make_episode(10, seed=seed))
        assert store.total_steps <= 25
        assert sum(len(ep) for ep in store.episodes) == store.total_steps
    assert len(store.episodes) == 2  # FIFO: only the two newest fit
    assert store.episodes[0].seed == 3 and store.episodes[1].seed == 4


def test_not_ready_errors():
    store = EpisodeStore(capacity=100)
    with pytest.raises(BufferNotReady):
        store.sample_batch(1, 4, np.random.default_rng(0))
    store.add_episode(make_episode(3))
    with pytest.raises(BufferNotReady):
        store.sample_batch(1, 4, np.random.default_rng(0))


def test_episode_disk_round_trip(tmp_path):
    ep = make_episode(9, seed=11)
    save_episode(ep, tmp_path, "ep_000")
    loaded = load_episode(tmp_path / "ep_000.npz")
    assert np.array_equal(loaded.images, ep.images)
    assert np.array_equal(loaded.actions, ep.actions)
    assert np.array_equal(loaded.rewards, ep.rewards)
    assert np.array_equal(loaded.ground_truth, ep.ground_truth)
    assert loaded.task == "dot_reach" and loaded.seed == 11
    header = (tmp_path / "ep_000.json").read_text()
    assert '"length": 9' in header


def test_episode_shape_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        Episode(images=rng.integers(0, 255, size=(5, 72, 72, 3), dtype=np.uint8),
                actions=np.zeros((4, 2), dtype=np.float32),
                rewards=np.zeros(5, dtype=np.float32),
                terminals=np.zeros(5, dtype=bool))


def test_stored_episodes_become_immutable():
    store = EpisodeStore(capacity=100)
    ep = make_episode(5)
    store.add_episode(ep)
    with pytest.raises(ValueError):
        ep.images[0, 0, 0, 0] = 0
    with pytest.raises(ValueError):
        ep.rewards[0] = 9.0
