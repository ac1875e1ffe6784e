import math

import numpy as np
import pytest

from aaupower import dataset as dsm
from aaupower.dataset import (
    CarrierState, Dataset, DatasetFormatError, SampleRecord, SplitError, SplitSpec,
    compute_norm_stats, csv_columns, read_csv, split, write_csv,
)
from aaupower.evaluation import mae
from aaupower.features import encode_batch, fit_encoder
from aaupower.teacher import generate_dataset, sample_fleet


def three_rows():
    recs = [
        SampleRecord(1, "T00", 0, 0, 8, [CarrierState("8T8R", 1800.0, 20.0, 40.0, 0.1 + 0.2)],
                     power_w=123.456789012345678, true_power_w=120.0),
        SampleRecord(1, "T00", 0, 1, 8, [CarrierState("8T8R", 1800.0, 20.0, 40.0, 0.5, dss=1 / 3),
                                         CarrierState("4T4R", 2100.0, 10.0, 20.0, 0.0, dcs=1.0)],
                     power_w=200.0),
        SampleRecord(7, "T01", 1, 23, 64, [CarrierState("64T64R", 3500.0, 100.0, 80.0, 0.9)],
                     power_w=1e-3, true_power_w=2.5e-7),
    ]
    return Dataset.from_records(recs, c_max=3)


def test_csv_header_layout():
    cols = csv_columns(2)
    assert cols[:5] == ["aau_id", "type_id", "day", "hour", "num_trx"]
    assert cols[5:15] == ["c0_present", "c0_tx_mode", "c0_freq_mhz", "c0_bw_mhz", "c0_pmax_w",
                          "c0_load", "c0_dcs", "c0_dchs", "c0_dss", "c0_ddd"]
    assert cols[-2:] == ["power_w", "true_power_w"]
    assert len(cols) == 7 + 20


def test_csv_roundtrip_small(tmp_path):
    ds = three_rows()
    write_csv(ds, tmp_path / "d.csv")
    back = read_csv(tmp_path / "d.csv")
    assert back.equals(ds)
    assert math.isnan(back.true_power_w[1])
    for a, b in zip(back.records(), ds.records()):
        assert a.carriers == b.carriers and a.power_w == b.power_w


def test_csv_roundtrip_preserves_metrics(tmp_path):
    ds = generate_dataset(sample_fleet(5, 50, 6, 42), 12, 0)
    write_csv(ds, tmp_path / "big.csv")
    back = read_csv(tmp_path / "big.csv")
    assert back.equals(ds)
    assert mae(back.power_w, back.true_power_w) == mae(ds.power_w, ds.true_power_w)


def test_missing_column_named(tmp_path):
    ds = three_rows()
    write_csv(ds, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    header = lines[0].split(",")
    drop = header.index("c1_load")
    cut = [",".join(v for i, v in enumerate(l.split(",")) if i != drop) for l in lines]
    (tmp_path / "bad.csv").write_text("\n".join(cut) + "\n")
    with pytest.raises(DatasetFormatError, match="c1_load") as exc:
        read_csv(tmp_path / "bad.csv")
    assert exc.value.column == "c1_load"


def test_malformed_value_cites_row_and_column(tmp_path):
    ds = three_rows()
    write_csv(ds, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    fields = lines[2].split(",")
    fields[csv_columns(3).index("power_w")] = "abc"
    lines[2] = ",".join(fields)
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError) as exc:
        read_csv(tmp_path / "bad.csv")
    assert exc.value.row == 3 and exc.value.column == "power_w"


def test_short_row_rejected(tmp_path):
    ds = three_rows()
    write_csv(ds, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    lines[1] = ",".join(lines[1].split(",")[:-3])
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="row 2"):
        read_csv(tmp_path / "bad.csv")


# ── split ──────────────────────────────────────────────────────────────


def test_split_default_proportions():
    ds = generate_dataset(sample_fleet(3, 5, 6, 0), 12, 0)
    tr, va, te = split(ds, SplitSpec.by_count(12, 2), seed=0)
    assert len(te) * 12 == len(ds) * 2
    assert len(va) == round(0.2 * (len(tr) + len(va)))
    assert len(tr) + len(va) + len(te) == len(ds)
    keys = [set(x.row_keys.tolist()) for x in (tr, va, te)]
    assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
    assert set(np.unique(te.day)) == {10, 11}
    assert not np.isin(tr.day, [10, 11]).any()


def test_split_deterministic(small_ds):
    spec = SplitSpec.by_count(6, 1)
    a, b = split(small_ds, spec, 3), split(small_ds, spec, 3)
    for x, y in zip(a, b):
        assert x.equals(y)
    c = split(small_ds, spec, 4)
    assert not a[0].equals(c[0])


def test_split_errors(small_ds):
    with pytest.raises(SplitError):
        SplitSpec([0, 1], [1, 2])
    with pytest.raises(SplitError):
        split(small_ds, SplitSpec([0], [99]), 0)
    with pytest.raises(SplitError):
        split(small_ds, SplitSpec([], [5]), 0)


# ── filter ─────────────────────────────────────────────────────────────


def test_filter_single_carrier(small_ds):
    out = dsm.filter(small_ds, carrier_count=1)
    assert len(out) > 0 and (out.n_carriers == 1).all()


def test_filter_no_shutdown(small_ds):
    out = dsm.filter(small_ds, has_carrier_shutdown=False)
    assert len(out) < len(small_ds)
    assert not out.dcs.any()


def test_filter_preserves_order(small_ds):
    out = dsm.filter(small_ds, type_id="T01")
    idx = np.flatnonzero(small_ds.type_id == "T01")
    assert out.equals(small_ds.take(idx))


def test_generalization_cohort_counts(small_ds):
    sel = "T00"
    own = dsm.filter(small_ds, type_id=sel, has_carrier_shutdown=False)
    others = dsm.filter(small_ds, predicate=lambda d: d.type_id != sel)
    cohort = dsm.filter(small_ds, predicate=lambda d: (d.type_id != sel) | ~d.has_carrier_shutdown)
    assert len(cohort) == len(own) + len(others)
    assert len(dsm.concat([own, others])) == len(cohort)


# ── normalization ──────────────────────────────────────────────────────


def test_norm_stats_headroom_and_constant_flag(small_ds):
    tr = dsm.filter(small_ds, type_id="T01")
    ns = compute_norm_stats(tr)
    assert ns.power_max_w == pytest.approx(1.2 * tr.power_w.max())
    assert ns.is_constant("num_trx")
    assert not ns.scale("num_trx", tr.num_trx).any()


def test_load_scaling_identity_like(small_ds):
    ns = compute_norm_stats(small_ds)
    loads = small_ds.load[small_ds.present]
    scaled = ns.scale("load", loads)
    assert np.max(np.abs(scaled - loads)) < 0.05


def test_stats_from_train_only(small_fleet):
    six = generate_dataset(small_fleet, 6, 1)
    extra = dsm.filter(generate_dataset(small_fleet, 7, 1), predicate=lambda d: d.day == 6)
    seven = dsm.concat([six, extra])
    tr6, _, te6 = split(six, SplitSpec(list(range(5)), [5]), 0)
    # more test-day rows appended: the fitted encoder must not move
    tr7, _, te7 = split(seven, SplitSpec(list(range(5)), [5, 6]), 0)
    assert len(te7) > len(te6)
    enc6, enc7 = fit_encoder(tr6, 6), fit_encoder(tr7, 6)
    assert enc6 == enc7
    assert np.array_equal(encode_batch(tr6, enc6), encode_batch(tr6, enc7))
    assert not set(tr7.row_keys.tolist()) & set(te7.row_keys.tolist())


def test_empty_train_rejected():
    with pytest.raises(ValueError):
        compute_norm_stats(Dataset.empty(2))
