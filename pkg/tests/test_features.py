import itertools

import numpy as np
import pytest

from aaupower.dataset import CarrierState, Dataset, SampleRecord
from aaupower.features import (
    BLOCK_FEATURES, BLOCK_WIDTH, EncoderSpec, EncodingError, encode, encode_batch, fit_encoder,
    input_width,
)


@pytest.mark.parametrize("n_types,c_max,width", [(24, 6, 84), (24, 1, 34), (1, 1, 11), (5, 6, 65)])
def test_input_width(n_types, c_max, width):
    assert input_width(n_types, c_max) == width


def test_fitted_encoder_width(small_ds):
    enc = fit_encoder(small_ds, 6)
    assert enc.n_inputs == 4 + 60
    assert encode_batch(small_ds, enc).shape == (len(small_ds), 64)


def test_one_hot_and_padding(small_ds):
    enc = fit_encoder(small_ds, 6)
    X = encode_batch(small_ds, enc)
    onehot = X[:, :enc.n_types]
    assert np.array_equal(onehot.sum(axis=1), np.ones(len(small_ds)))
    pos = np.array([enc.type_registry.index(t) for t in small_ds.type_id])
    assert np.array_equal(onehot.argmax(axis=1), pos)
    for k in range(6):
        block = X[:, enc.block_slice(k)]
        absent = small_ds.n_carriers <= k
        assert not block[absent].any()
        # tx code is strictly positive on every present slot
        assert (block[~absent, 0] > 0).all()
    assert (X >= 0).all() and (X <= 1).all()


def test_block_layout_indices(small_ds):
    enc = fit_encoder(small_ds, 6)
    for j, name in enumerate(BLOCK_FEATURES):
        idx = enc.feature_indices(name)
        assert idx == [enc.n_types + BLOCK_WIDTH * k + j for k in range(6)]


def test_batch_matches_scalar(small_ds):
    enc = fit_encoder(small_ds, 6)
    X = encode_batch(small_ds, enc)
    rng = np.random.default_rng(0)
    for i in rng.choice(len(small_ds), 300, replace=False):
        assert np.array_equal(X[i], encode(small_ds.record(int(i)), enc))


def _rec(carriers, type_id="A", num_trx=8):
    return SampleRecord(0, type_id, 0, 0, num_trx, carriers, power_w=100.0)


def _toy_encoder():
    cs = [CarrierState("4T4R", 700.0, 10.0, 20.0, 0.0), CarrierState("8T8R", 3500.0, 100.0, 80.0, 1.0)]
    ds = Dataset.from_records([_rec(cs[:1], "A", 4), _rec(cs, "B", 64)], c_max=3)
    return fit_encoder(ds, 3)


def test_permutation_invariance():
    enc = _toy_encoder()
    cs = [CarrierState("8T8R", 3500.0, 100.0, 80.0, 0.9),
          CarrierState("4T4R", 700.0, 10.0, 20.0, 0.1),
          CarrierState("4T4R", 1800.0, 20.0, 40.0, 0.5, dss=0.3)]
    ref = encode(_rec(cs), enc)
    for perm in itertools.permutations(cs):
        assert np.array_equal(encode(_rec(list(perm)), enc), ref)
        ds = Dataset.from_records([_rec(list(perm))], c_max=3)
        assert np.array_equal(encode_batch(ds, enc)[0], ref)
    # slot 0 holds the lowest frequency
    assert ref[enc.block_slice(0)][2] == 0.0


def test_same_band_ties_broken_by_pmax():
    enc = _toy_encoder()
    lo = CarrierState("4T4R", 1800.0, 20.0, 20.0, 0.5)
    hi = CarrierState("4T4R", 1800.0, 20.0, 80.0, 0.2)
    x = encode(_rec([lo, hi]), enc)
    assert x[enc.block_slice(0)][4] == 1.0
    assert x[enc.block_slice(1)][4] == 0.0


def test_distinct_configurations_encode_distinctly():
    enc = _toy_encoder()
    rng = np.random.default_rng(1)
    seen = {}
    for _ in range(300):
        n = int(rng.integers(1, 4))
        cs = [CarrierState(str(rng.choice(["4T4R", "8T8R"])), float(rng.choice([700, 1800, 3500])),
                           float(rng.choice([10, 20, 100])), float(rng.choice([20, 40, 80])),
                           float(rng.choice([0.0, 0.25, 0.5]))) for _ in range(n)]
        r = _rec(cs, str(rng.choice(["A", "B"])))
        key = (r.type_id, tuple(sorted((c.tx_mode, c.freq_mhz, c.bw_mhz, c.pmax_w, c.load) for c in cs)))
        x = encode(r, enc).tobytes()
        if x in seen:
            assert seen[x] == key
        seen[x] = key


def test_unknown_type_and_too_many_carriers():
    enc = _toy_encoder()
    c = CarrierState("4T4R", 700.0, 10.0, 20.0, 0.0)
    with pytest.raises(EncodingError, match="unknown type_id 'Z'"):
        encode(_rec([c], "Z"), enc)
    with pytest.raises(EncodingError, match="carriers"):
        encode(_rec([c] * 4), enc)
    with pytest.raises(EncodingError, match="tx_mode"):
        encode(_rec([CarrierState("2T2R", 700.0, 10.0, 20.0, 0.0)]), enc)
    ds = Dataset.from_records([_rec([c]), _rec([c], "Z")], c_max=3)
    with pytest.raises(EncodingError, match="row 1"):
        encode_batch(ds, enc)


def test_out_of_range_values_clipped():
    enc = _toy_encoder()
    x = encode(_rec([CarrierState("4T4R", 5000.0, 10.0, 200.0, 0.0)], num_trx=128), enc)
    b = x[enc.block_slice(0)]
    assert b[1] == 1.0 and b[2] == 1.0 and b[4] == 1.0


def test_encoder_dict_roundtrip(small_ds):
    enc = fit_encoder(small_ds, 6)
    assert EncoderSpec.from_dict(enc.to_dict()) == enc


def test_registry_override(small_ds):
    reg = ["T00", "T01", "T02", "T03", "T99"]
    enc = fit_encoder(small_ds, 6, type_registry=reg)
    assert enc.n_types == 5
    with pytest.raises(EncodingError):
        fit_encoder(small_ds, 6, type_registry=["T00"])
