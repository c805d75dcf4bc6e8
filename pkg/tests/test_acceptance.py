"""End-to-end properties of the pruning pipeline on desk-scale inputs."""
import numpy as np
import numpy.testing as npt

from catp.compensation import aggregate_average, aggregate_high, aggregate_low, rebuild_sequence
from catp.encoder import transformer_layer
from catp.models import CompensationMode, EncoderConfig, PruneThresholds
from catp.numerics import Rng, gaussian_init
from catp.pipeline import CatpModel
from catp.pruning import ScoringHead, partition_tokens
from catp.synthetic import disk_image, disk_mask, random_image
from catp.weights import load_weights


def test_partition_matches_direct_classification():
    rng = Rng(2024)
    for _ in range(10000):
        n = 1 + int(rng.next_u64() % 256)
        scores = np.clip(rng.uniform(n), 1e-12, 1 - 1e-12)
        theta_d, theta_u = np.sort(rng.uniform(2))
        part = partition_tokens(scores, theta_d, theta_u)
        labels = np.full(n, -1)
        labels[part.low] = 0
        labels[part.mid] = 1
        labels[part.high] = 2
        assert sum(part.counts()) == n and np.all(labels >= 0)
        expected = np.where(scores < theta_d, 0, np.where(scores > theta_u, 2, 1))
        assert np.array_equal(labels, expected)


def test_no_prune_identity(desk_model, disk, desk_config):
    result = desk_model.forward(disk, PruneThresholds(theta_d=0.0, theta_u=1.0), CompensationMode.WEIGHTED)
    assert result.sequence_lengths == [17, 17, 17, 17]
    for record in result.records:
        assert record.mask.popcount == desk_config.num_tokens
        assert record.prototypes == []
    deepest = result.pyramid.levels[-1]
    for level in result.pyramid.levels:
        npt.assert_array_equal(level, deepest)

    seq = desk_model.embed(disk)
    for layer in desk_model.weights.encoder.layers:
        seq = transformer_layer(seq, layer, desk_config.num_heads)
    npt.assert_array_equal(deepest, seq.patches)


def test_refill_contract_on_random_runs(desk_config):
    rng = Rng(77)
    for run in range(100):
        model = CatpModel(desk_config, load_weights(None, desk_config, rng.next_u64()))
        image = random_image(desk_config.image_h, desk_config.image_w, rng)
        theta_d = 0.35 + 0.15 * rng.uniform(1)[0]
        theta_u = 0.5 + 0.15 * rng.uniform(1)[0]
        result = model.forward(image, PruneThresholds(theta_d=theta_d, theta_u=theta_u))
        levels, active = result.pyramid.levels, result.active_sets
        for s in range(len(levels) - 1):
            assert np.array_equal(levels[s][active[s + 1]], levels[s + 1][active[s + 1]])
        for s in range(len(levels) - 1):
            dropped = np.setdiff1d(active[s], active[s + 1])
            for k in range(s + 1):
                assert np.array_equal(levels[k][dropped], levels[s][dropped])


def test_prototype_weights_against_independent_normalisation():
    rng = Rng(5)
    for _ in range(100):
        n = 1 + int(rng.next_u64() % 12)
        x = gaussian_init(rng, n, 8, 2.0)
        p_low = 0.01 + 0.28 * rng.uniform(n)
        p_high = 0.71 + 0.28 * rng.uniform(n)
        low, high = aggregate_low(x, p_low), aggregate_high(x, p_high)
        for proto, raw in ((low, p_low), (high, 1.0 - p_high)):
            assert abs(proto.weight_vector.sum() - 1.0) < 1e-9
            npt.assert_allclose(proto.weight_vector, [r / sum(raw) for r in raw], atol=1e-12)
            assert np.all(proto.feature >= x.min(axis=0) - 1e-12)
            assert np.all(proto.feature <= x.max(axis=0) + 1e-12)
        equal = np.full(n, 0.2)
        npt.assert_allclose(aggregate_low(x, equal).feature, aggregate_average(x, equal).feature, atol=1e-12)


def test_rebuilt_sequence_shape():
    x = gaussian_init(Rng(6), 7, 4, 1.0)
    low, high = aggregate_low(x[:2], [0.1, 0.2]), aggregate_high(x[5:], [0.8, 0.9])
    assert len(rebuild_sequence(np.zeros(4), x[2:5], [2, 3, 4], low, high)) == 3 + 3
    assert len(rebuild_sequence(np.zeros(4), x[2:5], [2, 3, 4], None, high)) == 3 + 2


def _edge_cells(config: EncoderConfig, radius: float):
    """Grid cells whose own patch or a 4-neighbour's patch straddles the disk edge."""
    inside = disk_mask(config.image_h, config.image_w, radius)
    p = config.patch_size
    frac = inside.reshape(config.grid_h, p, config.grid_w, p).mean(axis=(1, 3))
    mixed = (frac > 0) & (frac < 1)
    labels = frac >= 0.5
    near = mixed.copy()
    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        shifted_mixed = np.zeros_like(mixed)
        shifted_label = labels.copy()
        ys = slice(max(dy, 0), config.grid_h + min(dy, 0))
        yd = slice(max(-dy, 0), config.grid_h + min(-dy, 0))
        xs = slice(max(dx, 0), config.grid_w + min(dx, 0))
        xd = slice(max(-dx, 0), config.grid_w + min(-dx, 0))
        shifted_mixed[yd, xd] = mixed[ys, xs]
        shifted_label[yd, xd] = labels[ys, xs]
        near |= shifted_mixed | (shifted_label != labels)
    return near.reshape(-1), frac.reshape(-1)


def _edge_fraction(positions: np.ndarray, edge: np.ndarray) -> float:
    return float(edge[positions].mean())


def test_retained_tokens_concentrate_on_the_object_edge():
    config = EncoderConfig(image_h=64, image_w=64, patch_size=8, embed_dim=32, num_heads=4,
                           num_layers=8, stage_boundaries=(2, 4, 6))
    radius = 64 / 3.0
    edge, frac = _edge_cells(config, radius)
    passes = 0
    for seed in range(10):
        weights = load_weights(None, config, 1000 + seed)
        model = CatpModel(config, weights)
        image = disk_image(64, 64, Rng(seed).derive("image"), radius=radius)
        patches = model.embed(image).patches
        fg, bg = patches[frac == 1].mean(axis=0), patches[frac == 0].mean(axis=0)
        direction = fg - bg
        midpoint = (fg + bg) / 2.0
        # each head maps pure background to about -gain and pure foreground to about +gain
        heads = []
        for gain in (5.0, 15.0, 40.0):
            w = gain * direction / (direction @ direction / 2.0)
            heads.append(ScoringHead(weight=w, bias=-(w @ midpoint)))
        model.weights.score_heads = heads
        result = model.forward(image, PruneThresholds(), CompensationMode.WEIGHTED)
        first = _edge_fraction(result.records[0].surviving_index_map, edge)
        last = _edge_fraction(result.records[-1].surviving_index_map, edge)
        passes += last > first
    assert passes >= 8


def test_identical_inputs_reproduce_outputs(desk_config, disk):
    a = CatpModel(desk_config, load_weights(None, desk_config, 5)).forward(disk)
    b = CatpModel(desk_config, load_weights(None, desk_config, 5)).forward(disk)
    npt.assert_array_equal(a.prediction, b.prediction)
    assert a.stage_counts == b.stage_counts
    assert a.prediction.shape == (64, 64)
    assert 0.0 <= a.prediction.min() and a.prediction.max() <= 1.0
