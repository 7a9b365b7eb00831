import itertools

import numpy as np
import pytest

from phantomkit.cohort import (
    FEATURE_NAMES,
    Dataset,
    PatientFeatures,
    TaskId,
    ZScoreParams,
    build_position_dataset,
    build_retrieval_dataset,
    load_cohort,
    pairwise_features,
    position_target_mm,
    retrieval_target_pct,
    save_cohort,
    zscore_fit,
)
from phantomkit.errors import ConstantFeature, GenerationFailure, InvalidConfig, ShapeError
from phantomkit.synth import LatentTable, SynthConfig, clone_record, gen_synthetic_cohort
from phantomkit.voxelgeom import Point3, sdsc, translate_mask


@pytest.fixture(scope="module")
def small_cohort():
    records, truths = gen_synthetic_cohort(SynthConfig(n_patients=6, seed=42))
    return records, truths


def features_from(vals):
    base = dict(
        age=3.0, adap=13.0, adlr=19.0, icsc=5.5, gend=0, hesz=8.5,
        heig=100.0, ldlr=8.0, rdlr=8.0, rdis=6.0, spis=9.0, weig=16.0,
    )
    base.update(vals)
    return PatientFeatures(**base)


class TestZScore:
    def test_hand_computed(self):
        mean, sd = zscore_fit([2.0, 4.0, 6.0])
        assert mean == pytest.approx(4.0)
        assert sd == pytest.approx(2.0)

    def test_constant_column(self):
        with pytest.raises(ConstantFeature):
            zscore_fit([3.0, 3.0, 3.0])

    def test_round_trip(self, rng):
        data = rng.normal(5.0, 3.0, size=40)
        mean, sd = zscore_fit(data)
        z = (data - mean) / sd
        assert np.allclose(z * sd + mean, data, atol=1e-12)

    def test_params_normalize_columns(self, rng):
        raw_X = rng.normal(size=(30, len(FEATURE_NAMES))) * 5 + 2
        raw_y = rng.normal(size=30)
        params = ZScoreParams.fit(raw_X, raw_y)
        norm = params.apply_features(raw_X)
        assert np.all(np.abs(norm.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(norm.std(axis=0, ddof=1) - 1) < 1e-9)
        y = params.apply_target(raw_y)
        assert abs(y.mean()) < 1e-9 and abs(y.std(ddof=1) - 1) < 1e-9

    def test_constant_feature_dropped_with_warning(self, rng):
        raw_X = rng.normal(size=(20, len(FEATURE_NAMES)))
        raw_X[:, 4] = 1.0  # constant gender column
        raw_y = rng.normal(size=20)
        with pytest.warns(UserWarning, match="GEND"):
            params = ZScoreParams.fit(raw_X, raw_y)
        assert "GEND" not in params.feature_names
        assert params.apply_features(raw_X).shape[1] == len(FEATURE_NAMES) - 1

    def test_json_round_trip(self, rng):
        raw_X = rng.normal(size=(10, len(FEATURE_NAMES)))
        raw_y = rng.normal(size=10)
        params = ZScoreParams.fit(raw_X, raw_y)
        back = ZScoreParams.from_json(params.to_json())
        assert np.allclose(back.apply_features(raw_X), params.apply_features(raw_X))


class TestPairwiseFeatures:
    def test_self_pair_zero(self):
        p = features_from({})
        assert np.all(pairwise_features(p, p) == 0.0)

    def test_age_difference(self):
        p = features_from({"age": 3.0})
        q = features_from({"age": 5.0})
        assert pairwise_features(p, q)[0] == pytest.approx(2.0)

    def test_symmetric(self, rng):
        for _ in range(5):
            vp = np.abs(rng.normal(size=12)) + [2, 11, 16, 4, 0, 7, 86, 6, 6, 4, 7, 10]
            vq = np.abs(rng.normal(size=12)) + [2, 11, 16, 4, 0, 7, 86, 6, 6, 4, 7, 10]
            vp[4], vq[4] = rng.integers(0, 2), rng.integers(0, 2)
            p, q = PatientFeatures.from_vector(vp), PatientFeatures.from_vector(vq)
            assert np.array_equal(pairwise_features(p, q), pairwise_features(q, p))

    def test_gender_entry_binary(self):
        p = features_from({"gend": 0})
        q = features_from({"gend": 1})
        assert pairwise_features(p, q)[4] == 1.0
        assert pairwise_features(p, p)[4] == 0.0


class TestPositionDataset:
    def test_row_count_and_provenance(self, small_cohort):
        records, _ = small_cohort
        ds = build_position_dataset(records, "liver", "is")
        assert ds.task == TaskId.LIVER_IS
        assert ds.n_rows == len(records)
        assert ds.provenance == tuple(r.id for r in records)

    def test_planted_offsets_recovered(self):
        records, truths = gen_synthetic_cohort(
            SynthConfig(n_patients=5, seed=7, anatomy_noise_mm=0.0)
        )
        for rec in records:
            for organ in ("liver", "spleen"):
                for i, axis in enumerate(("lr", "ap", "is")):
                    got = position_target_mm(rec, organ, axis)
                    assert got == pytest.approx(truths[rec.id].offsets_mm[organ][i], abs=1e-9)
                    half_voxel = rec.ct.spacing[i] / 2
                    assert abs(got - truths[rec.id].raw_offsets_mm[organ][i]) <= half_voxel + 1e-9

    def test_translation_consistency(self, small_cohort):
        records, _ = small_cohort
        rec = records[0]
        shift = Point3(4.0, -2.0, 5.0)
        import dataclasses

        moved = dataclasses.replace(
            rec,
            liver=translate_mask(rec.liver, shift),
            spleen=translate_mask(rec.spleen, shift),
            body=translate_mask(rec.body, shift),
            cord=translate_mask(rec.cord, shift),
            l2_center=rec.l2_center + Point3(4.0, -2.0, 5.0),
        )
        for organ in ("liver", "spleen"):
            for axis in ("lr", "ap", "is"):
                assert position_target_mm(moved, organ, axis) == pytest.approx(
                    position_target_mm(rec, organ, axis), abs=1e-9
                )

    def test_too_small_cohort(self, small_cohort):
        records, _ = small_cohort
        with pytest.raises(ShapeError):
            build_position_dataset(records[:1], "liver", "lr")


class TestRetrievalDataset:
    def test_pair_count_and_no_self_pairs(self, small_cohort):
        records, _ = small_cohort
        ds = build_retrieval_dataset(records[:4], "liver")
        assert ds.n_rows == 6  # 4*3/2
        assert all(p != q for p, q in ds.provenance)
        assert len(set(ds.provenance)) == ds.n_rows

    def test_identical_anatomy_pair_scores_100(self, small_cohort):
        records, _ = small_cohort
        clone = clone_record(records[0], "pclone")
        assert retrieval_target_pct(records[0], clone, "liver") == 100.0
        assert retrieval_target_pct(records[0], clone, "body") == 100.0

    def test_targets_match_sdsc(self, small_cohort):
        records, _ = small_cohort
        cohort = records[:4]
        cache = {}
        ds = build_retrieval_dataset(cohort, "spleen", target_cache=cache)
        by_id = {r.id: r for r in cohort}
        for row, (pid, qid) in enumerate(ds.provenance):
            raw = ds.zscore.invert_target(ds.y[row])
            expect = sdsc(by_id[pid].spleen, by_id[qid].spleen, 5.0, align=True)
            assert raw == pytest.approx(expect, abs=1e-9)
            assert cache[("spleen", pid, qid)] == expect

    def test_alignment_makes_targets_translation_invariant(self, small_cohort):
        records, _ = small_cohort
        p, q = records[0], records[1]
        base = retrieval_target_pct(p, q, "liver")
        import dataclasses

        moved = dataclasses.replace(q, liver=translate_mask(q.liver, Point3(6.0, 4.0, -5.0)))
        assert retrieval_target_pct(p, moved, "liver") == base


class TestGenerator:
    def test_same_seed_bit_identical(self):
        a, ta = gen_synthetic_cohort(SynthConfig(n_patients=5, seed=11))
        b, tb = gen_synthetic_cohort(SynthConfig(n_patients=5, seed=11))
        for x, y in zip(a, b):
            assert x.features == y.features
            assert np.array_equal(x.ct.values, y.ct.values)
            assert np.array_equal(x.liver.occupancy, y.liver.occupancy)
            assert x.l2_center == y.l2_center
        for pid in ta:
            assert ta[pid].to_json() == tb[pid].to_json()

    def test_cohort_size_and_invariants(self):
        records, truths = gen_synthetic_cohort(SynthConfig(n_patients=12, seed=3))
        assert len(records) == 12 and len(truths) == 12
        for rec in records:
            assert not rec.liver.is_empty() and not rec.spleen.is_empty()
            assert rec.body.same_geometry(rec.ct)

    def test_invalid_config(self):
        with pytest.raises(InvalidConfig):
            SynthConfig(n_patients=3)
        with pytest.raises(InvalidConfig):
            SynthConfig(feature_noise=-1.0)

    def test_infeasible_geometry_fails(self):
        huge = LatentTable(liver_axes=(80.0, 80.0, 80.0))
        with pytest.raises(GenerationFailure):
            gen_synthetic_cohort(SynthConfig(n_patients=4, seed=0, latent=huge))

    def test_clone_record(self, small_cohort, rng):
        records, _ = small_cohort
        clone = clone_record(records[2], "pX", rng, feature_jitter=0.01)
        assert clone.id == "pX"
        assert np.array_equal(clone.liver.occupancy, records[2].liver.occupancy)
        assert clone.features.gend == records[2].features.gend


class TestCohortIo:
    def test_save_load_round_trip(self, tmp_path, small_cohort):
        records, truths = small_cohort
        gt = {pid: t.to_json() for pid, t in truths.items()}
        save_cohort(tmp_path / "cohort", records, gt)
        back = load_cohort(tmp_path / "cohort")
        assert [r.id for r in back] == [r.id for r in records]
        for x, y in zip(back, records):
            assert np.allclose(x.features.as_vector(), y.features.as_vector())
            assert np.array_equal(x.ct.values, y.ct.values)
            assert np.array_equal(x.cord.occupancy, y.cord.occupancy)
            assert x.l2_center == y.l2_center
            assert x.extended_body is None

    def test_dataset_invariants(self, rng):
        X = rng.normal(size=(3, 2))
        y = rng.normal(size=3)
        params = ZScoreParams(("A", "B"), (0, 1), np.zeros(2), np.ones(2), 0.0, 1.0)
        with pytest.raises(ShapeError):
            Dataset(TaskId.BODY_S, X, y[:2], ("a", "b", "c"), params)
        with pytest.raises(ValueError):
            Dataset(TaskId.BODY_S, X, y, (("a", "a"), ("a", "b"), ("b", "c")), params)
