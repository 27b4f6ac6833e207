import json

import numpy as np
import pytest

from appident.classifier import CnnAppClassifier
from appident.nn.checkpoint import manifest_hash
from appident.occlusion import OcclusionSpec, run_occlusion
from appident.pipeline import extract, field_maps
from appident.synth import generate_corpus, make_sni_only_spec
from appident.tls import (
    ALL_EXTENSIONS,
    CIPHER_INFO_CLIENT,
    DEFAULT_OCCLUSION_ROWS,
    extension_field,
)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("occ")
    spec = make_sni_only_spec(n_apps=4, sessions_per_app=20, seed=21)
    generate_corpus(spec, tmp / "c.pcap", tmp / "c.tsv")
    result = extract(tmp / "c.pcap", tmp / "c.tsv")
    ds = result.dataset
    rng = np.random.default_rng(0)
    order = rng.permutation(len(ds))
    train_idx, test_idx = order[: len(ds) * 3 // 4], order[len(ds) * 3 // 4 :]
    clf = CnnAppClassifier(max_epochs=10, patience=10, batch_size=8, random_state=0)
    clf.fit(ds.X[train_idx], ds.y[train_idx])
    maps_all = field_maps(result.flows, ds.mode)
    ds_test = ds.subset(test_idx)
    maps = [maps_all[i] for i in ds_test.flow_index]
    return clf, ds_test, maps


def test_default_rows_match_field_table():
    names = [name for name, _ in DEFAULT_OCCLUSION_ROWS]
    assert "Extension #0 (SNI)" in names
    assert "Cipher info (Client), All extensions" in names
    assert len(names) == len(set(names))


def test_baseline_and_sni_row(trained):
    clf, ds, maps = trained
    spec = OcclusionSpec(
        rows=[
            ("Extension #0 (SNI)", frozenset({extension_field(0)})),
            ("Never present", frozenset({extension_field(5)})),
        ],
        slice_name="https",
    )
    report = run_occlusion(clf, ds, maps, spec)
    assert report.slice_size == len(ds)
    assert report.baseline_accuracy > 0.9
    sni_row = report.rows[0]
    assert sni_row.flows_with_field == len(ds)
    assert sni_row.accuracy < report.baseline_accuracy  # the only discriminator
    absent = report.rows[1]
    assert absent.flows_with_field == 0
    assert absent.accuracy == report.baseline_accuracy
    assert absent.delta == 0.0


def test_model_parameters_bit_identical_after_run(trained):
    clf, ds, maps = trained
    before = [p.value.copy() for p in clf.network_.parameters()]
    bn_before = [
        (layer.running_mean.copy(), layer.running_var.copy())
        for layer in clf.network_.layers
        if layer.kind == "batchnorm"
    ]
    run_occlusion(clf, ds, maps, OcclusionSpec(rows=DEFAULT_OCCLUSION_ROWS[:5]))
    for p, b in zip(clf.network_.parameters(), before):
        assert np.array_equal(p.value, b)
    bn_after = [
        (layer.running_mean.copy(), layer.running_var.copy())
        for layer in clf.network_.layers
        if layer.kind == "batchnorm"
    ]
    for (m0, v0), (m1, v1) in zip(bn_before, bn_after):
        assert np.array_equal(m0, m1) and np.array_equal(v0, v1)


def test_report_reproducible(trained):
    clf, ds, maps = trained
    spec = OcclusionSpec(rows=DEFAULT_OCCLUSION_ROWS[:6])
    r1 = run_occlusion(clf, ds, maps, spec)
    r2 = run_occlusion(clf, ds, maps, spec)
    assert r1.to_dict() == r2.to_dict()


def test_joint_occlusion_never_beats_single_by_much(trained):
    clf, ds, maps = trained
    spec = OcclusionSpec(
        rows=[
            ("Cipher info (Client Hello)", frozenset({CIPHER_INFO_CLIENT})),
            ("All extensions", frozenset({ALL_EXTENSIONS})),
            ("Cipher info (Client), All extensions", frozenset({CIPHER_INFO_CLIENT, ALL_EXTENSIONS})),
        ]
    )
    report = run_occlusion(clf, ds, maps, spec)
    joint = report.rows[2].accuracy
    assert joint <= min(report.rows[0].accuracy, report.rows[1].accuracy) + 0.05


def test_mode_mismatch_rejected(trained):
    clf, ds, maps = trained
    from appident.encoding import StripMode

    bad = [m for m in maps]
    if bad[0] is not None:
        bad[0].mode = StripMode.ALL_LAYERS
        with pytest.raises(ValueError):
            run_occlusion(clf, ds, bad, OcclusionSpec(rows=DEFAULT_OCCLUSION_ROWS[:1]))
        bad[0].mode = StripMode.L234_REMOVED


def test_report_serialization(trained, tmp_path):
    clf, ds, maps = trained
    report = run_occlusion(clf, ds, maps, OcclusionSpec(rows=DEFAULT_OCCLUSION_ROWS[:3]))
    path = tmp_path / "occ.json"
    report.to_json(path)
    data = json.loads(path.read_text())
    assert data["baseline_accuracy"] == report.baseline_accuracy
    assert len(data["rows"]) == 3
    text = report.to_text()
    assert "Occluded part" in text
    assert len(text.splitlines()) == 3 + 3  # header rows + selector rows


def test_empty_selector_row_rejected():
    with pytest.raises(ValueError):
        OcclusionSpec(rows=[("bad", frozenset())])
