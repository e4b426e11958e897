import numpy as np
import pytest
from scipy import stats

from advmimic.errors import ContractError, EmptyBufferError
from advmimic.replay import ReplayBuffer, RoundCollector, Transition


def _t(i, terminal=False, sd=2, ad=1):
    return Transition(np.full(sd, float(i)), np.full(ad, -float(i)), float(i),
                      np.full(sd, i + 0.5), terminal)


def fill_episodes(buf, lengths, terminal_last, rng):
    """Push random episodes; returns the list of pushed Transitions per episode."""
    episodes = []
    for L, term in zip(lengths, terminal_last):
        ep = []
        for j in range(L):
            tr = Transition(rng.normal(size=buf.state_dim), rng.normal(size=buf.action_dim),
                            float(rng.normal()), rng.normal(size=buf.state_dim),
                            bool(term and j == L - 1))
            buf.push(tr)
            ep.append(tr)
        buf.mark_episode_end()
        episodes.append(ep)
    return episodes


def scan_window(flat, ends, start, n):
    """Linear-scan oracle: walk the stored sequence from ``start``."""
    rewards = []
    j = start
    while True:
        rewards.append(flat[j].syn_reward)
        if flat[j].terminal or ends[j] or len(rewards) == n or j + 1 == len(flat):
            break
        j += 1
    return rewards, flat[j].next_state, flat[j].terminal


def test_ring_eviction():
    buf = ReplayBuffer(20, 2, 1)
    for i in range(30):
        buf.push(_t(i))
    assert len(buf) == 20
    survivors = [buf.get(i).syn_reward for i in range(20)]
    assert survivors == [float(i) for i in range(10, 30)]
    buf.push(_t(30))
    assert [buf.get(i).syn_reward for i in range(20)] == [float(i) for i in range(11, 31)]


def test_push_dimension_mismatch():
    buf = ReplayBuffer(5, 2, 1)
    with pytest.raises(ContractError):
        buf.push(_t(0, sd=3))


def test_windows_never_cross_episode_marks():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(1000, 2, 1)
    fill_episodes(buf, [3, 4, 2, 6], [False] * 4, rng)
    b = buf.windows(np.arange(len(buf)), 5)
    ep_id = np.repeat(np.arange(4), [3, 4, 2, 6])
    for start in range(len(buf)):
        k = b.k[start]
        assert len(set(ep_id[start:start + k])) == 1


def test_sample_uniform_single_item():
    buf = ReplayBuffer(10, 2, 1)
    buf.push(_t(7))
    batch = buf.sample_uniform(4, np.random.default_rng(0))
    assert np.array_equal(batch.syn_reward, np.full(4, 7.0))


def test_sample_uniform_empty():
    with pytest.raises(EmptyBufferError):
        ReplayBuffer(10, 2, 1).sample_uniform(1, np.random.default_rng(0))
    with pytest.raises(EmptyBufferError):
        ReplayBuffer(10, 2, 1).sample_nstep(1, 3, np.random.default_rng(0))


def test_sample_uniform_reproducible():
    buf = ReplayBuffer(50, 2, 1)
    for i in range(50):
        buf.push(_t(i))
    a = buf.sample_uniform(16, np.random.default_rng(3)).syn_reward
    b = buf.sample_uniform(16, np.random.default_rng(3)).syn_reward
    assert np.array_equal(a, b)


def test_sample_uniform_chi_square():
    buf = ReplayBuffer(100, 2, 1)
    for i in range(100):
        buf.push(_t(i))
    draws = buf.sample_uniform(1_000_000, np.random.default_rng(11)).syn_reward.astype(int)
    counts = np.bincount(draws, minlength=100)
    assert stats.chisquare(counts).pvalue > 0.001


def test_nstep_n1_is_one_step():
    rng = np.random.default_rng(1)
    buf = ReplayBuffer(100, 2, 1)
    fill_episodes(buf, [5, 5], [True, False], rng)
    b = buf.windows(np.arange(len(buf)), 1)
    assert np.all(b.k == 1)
    for i in range(len(buf)):
        t = buf.get(i)
        s = b[i]
        assert s.rewards.tolist() == [t.syn_reward]
        assert np.array_equal(s.bootstrap_state, t.next_state)
        assert s.bootstrap_masked == t.terminal


def test_short_episode_truncates_windows():
    rng = np.random.default_rng(2)
    buf = ReplayBuffer(100, 2, 1)
    fill_episodes(buf, [3], [False], rng)
    b = buf.sample_nstep(64, 5, rng)
    assert np.all(b.k <= 3)


def test_nstep_matches_linear_scan_on_random_episodes():
    rng = np.random.default_rng(3)
    gamma = 0.9
    for trial in range(100):
        buf = ReplayBuffer(int(rng.integers(20, 200)), 3, 2)
        n_eps = int(rng.integers(1, 8))
        lengths = rng.integers(1, 15, size=n_eps)
        episodes = fill_episodes(buf, lengths, rng.integers(0, 2, size=n_eps).astype(bool), rng)
        # flatten what survived eviction, oldest first, with boundary marks
        flat, ends = [], []
        for ep in episodes:
            for j, tr in enumerate(ep):
                flat.append(tr)
                ends.append(j == len(ep) - 1)
        flat, ends = flat[-len(buf):], ends[-len(buf):]
        n = int(rng.integers(1, 7))
        b = buf.windows(np.arange(len(buf)), n)
        for start in range(len(buf)):
            rewards, boot, masked = scan_window(flat, ends, start, n)
            s = b[start]
            assert s.rewards.tolist() == rewards
            assert np.array_equal(s.bootstrap_state, boot)
            assert s.bootstrap_masked == masked
            direct = sum(gamma ** j * r for j, r in enumerate(rewards))
            assert sum(gamma ** j * r for j, r in enumerate(s.rewards)) == direct


def test_window_invalidated_by_eviction():
    buf = ReplayBuffer(4, 2, 1)
    for i in range(6):
        buf.push(_t(i))
    b = buf.windows(np.arange(4), 3)
    # oldest surviving is item 2; no window may reach back to 0 or 1
    assert b.rewards[0].tolist() == [2.0, 3.0, 4.0]
    assert b.rewards[3].tolist() == [5.0, 0.0, 0.0] and b.k[3] == 1


def test_round_collector():
    c = RoundCollector()
    with pytest.raises(ContractError):
        c.sample(4, np.random.default_rng(0))
    c.begin()
    for i in range(3):
        c.add([i, i], [i])
    c.end()
    s, a = c.sample(50, np.random.default_rng(0))
    assert set(s[:, 0]) <= {0.0, 1.0, 2.0}
    c.begin()
    c.add([9, 9], [9])
    c.end()
    s, a = c.sample(8, np.random.default_rng(0))
    assert np.all(s == 9) and np.all(a == 9) and len(s) == 8


def test_recent_batch_excludes_older_rounds():
    rng = np.random.default_rng(0)
    buf = ReplayBuffer(100, 2, 1)
    c = RoundCollector()
    for round_id in range(3):
        c.begin()
        for j in range(5):
            t = _t(round_id * 10 + j)
            buf.push(t)
            c.add(t.state, t.action)
        c.end()
    s, _ = c.sample(200, rng)
    assert np.all(s[:, 0] >= 20)


def test_dump(tmp_path):
    buf = ReplayBuffer(5, 2, 1)
    for i in range(7):
        buf.push(_t(i, terminal=i == 6))
    path = tmp_path / "buf.jsonl"
    buf.dump(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 6
