from collections import Counter

import pytest

from divgcn.synth import SynthConfig, generate


def test_shape_and_determinism():
    cfg = SynthConfig(users=30, items=60, categories=5, per_user=12, seed=4)
    log, table = generate(cfg)
    assert len(log) == 30 * 12
    assert table.num_categories == 5
    assert generate(cfg)[0] == log
    # no user repeats an item
    assert all(n == 1 for n in Counter((x.user_id, x.item_id) for x in log).values())


def test_dominant_share_tracks_bias():
    cfg = SynthConfig(users=100, items=400, categories=8, per_user=30, bias=0.7, seed=1)
    log, table = generate(cfg)
    shares = []
    by_user = {}
    for x in log:
        by_user.setdefault(x.user_id, []).append(table[x.item_id])
    for cats in by_user.values():
        shares.append(Counter(cats).most_common(1)[0][1] / len(cats))
    mean = sum(shares) / len(shares)
    assert 0.65 < mean < 0.85


def test_bad_configs():
    with pytest.raises(ValueError):
        generate(SynthConfig(items=10, per_user=20))
    with pytest.raises(ValueError):
        generate(SynthConfig(bias=1.5))
