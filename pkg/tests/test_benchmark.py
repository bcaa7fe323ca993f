import numpy as np
import pytest

from cood.benchmark import BenchmarkConfig, run_benchmark
from cood.errors import ConfigError, DataError
from cood.metrics import auroc
from cood.shift import ScoreVariant
from cood.store.types import DatasetManifest, ManifestRecord, ManifestRole
from cood.synth import SynthConfig, SynthWorld, synth_world, write_synth_world

SMALL = dict(classes=4, train_per_class=12, test_per_class=6, ood_per_class=6, seed=123)


@pytest.fixture(scope="module")
def world() -> SynthWorld:
    return synth_world(SynthConfig(**SMALL))


def bundle(world, name):
    return (world.manifests[name], {r.sample_id: r for r in world.records[name]})


def run(world, **kwargs):
    config = BenchmarkConfig(**kwargs)
    return run_benchmark(
        world.vocab,
        bundle(world, "id_train"),
        bundle(world, "id_test"),
        [bundle(world, "ood_appearance"), bundle(world, "ood_compositional")],
        config,
    )


class TestSynthWorld:
    def test_deterministic_files(self, tmp_path):
        w1 = synth_world(SynthConfig(**SMALL))
        w2 = synth_world(SynthConfig(**SMALL))
        d1, d2 = tmp_path / "a", tmp_path / "b"
        write_synth_world(w1, d1)
        write_synth_world(w2, d2)
        for f in sorted(p.name for p in d1.iterdir()):
            assert (d1 / f).read_bytes() == (d2 / f).read_bytes(), f

    def test_separable_extreme(self):
        cfg = SynthConfig(
            classes=3,
            train_per_class=10,
            test_per_class=8,
            ood_per_class=8,
            psi_in=1.0,
            psi_out=0.0,
            noise=0.05,
            seed=5,
        )
        w = synth_world(cfg)
        result = run_benchmark(
            w.vocab,
            bundle(w, "id_train"),
            bundle(w, "id_test"),
            [bundle(w, "ood_appearance")],
            BenchmarkConfig(alpha=0.5),
        )
        assert result.report.per_ood_set["ood_appearance"]["auroc"] == 1.0

    def test_indistinguishable_psis(self):
        cfg = SynthConfig(
            classes=3,
            train_per_class=10,
            test_per_class=20,
            ood_per_class=20,
            psi_in=0.7,
            psi_out=0.7,
            seed=9,
        )
        w = synth_world(cfg)
        result = run_benchmark(
            w.vocab,
            bundle(w, "id_train"),
            bundle(w, "id_test"),
            [bundle(w, "ood_appearance")],
            BenchmarkConfig(alpha=0.5),
        )
        assert abs(result.report.per_ood_set["ood_appearance"]["auroc"] - 0.5) < 0.2

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SynthConfig(psi_in=1.5)
        with pytest.raises(ConfigError):
            SynthConfig(classes=0)

    def test_config_json_round_trip(self, tmp_path):
        path = tmp_path / "synth.json"
        path.write_text('{"classes": 3, "seed": 4, "grid": [6, 6]}')
        cfg = SynthConfig.from_json(path)
        assert cfg.classes == 3 and cfg.seed == 4 and cfg.grid == (6, 6)
        path.write_text('{"bogus": 1}')
        with pytest.raises(ConfigError):
            SynthConfig.from_json(path)


class TestRunBenchmark:
    def test_alpha_zero_equals_css_only(self, world):
        result = run(world, alpha=0.0)
        id_css = [r.css for r in result.scores["id_test"]]
        for name in ("ood_appearance", "ood_compositional"):
            ood_css = [r.css for r in result.scores[name]]
            assert result.report.per_ood_set[name]["auroc"] == auroc(id_css, ood_css)
        for records in result.scores.values():
            for r in records:
                assert r.cood == r.css

    def test_fusion_invariant(self, world):
        result = run(world, alpha=0.5)
        for records in result.scores.values():
            for r in records:
                if r.ccs is not None:
                    assert r.cood == pytest.approx(r.css + 0.5 * r.ccs, abs=1e-12)
                else:
                    assert r.cood == r.css

    def test_parallel_degree_invariance(self, world):
        a = run(world, alpha=0.5, workers=1)
        b = run(world, alpha=0.5, workers=3)
        assert a.report.to_json() == b.report.to_json()
        for name in a.scores:
            assert a.scores[name] == b.scores[name]

    def test_record_order_invariance(self, world):
        base = run(world, alpha=0.5)
        manifest, records = bundle(world, "id_test")
        shuffled = DatasetManifest(
            role=manifest.role,
            name=manifest.name,
            packs=manifest.packs,
            records=tuple(reversed(manifest.records)),
        )
        result = run_benchmark(
            world.vocab,
            bundle(world, "id_train"),
            (shuffled, records),
            [bundle(world, "ood_appearance"), bundle(world, "ood_compositional")],
            BenchmarkConfig(alpha=0.5),
        )
        assert result.report.to_json() == base.report.to_json()

    def test_macro_is_unweighted_mean(self, world):
        report = run(world, alpha=0.5).report
        names = sorted(report.per_ood_set)
        assert report.macro_auroc == pytest.approx(
            float(np.mean([report.per_ood_set[n]["auroc"] for n in names])), abs=1e-12
        )
        assert report.macro_fpr == pytest.approx(
            float(np.mean([report.per_ood_set[n]["fpr_at_tpr"] for n in names])), abs=1e-12
        )

    def test_mcm_variant_skips_ccs(self, world):
        result = run(world, variant=ScoreVariant.MCM_BASELINE)
        for records in result.scores.values():
            for r in records:
                assert r.ccs is None

    def test_manifest_validation_failure(self, world):
        manifest, records = bundle(world, "id_test")
        broken = DatasetManifest(
            role=manifest.role,
            name=manifest.name,
            packs=manifest.packs,
            records=manifest.records + (ManifestRecord("ghost"),),
        )
        with pytest.raises(DataError):
            run_benchmark(
                world.vocab,
                bundle(world, "id_train"),
                (broken, records),
                [bundle(world, "ood_appearance")],
                BenchmarkConfig(),
            )

    def test_wrong_train_role(self, world):
        manifest, records = bundle(world, "id_train")
        wrong = DatasetManifest(
            role=ManifestRole.ID_TEST,
            name=manifest.name,
            packs=manifest.packs,
            records=manifest.records,
        )
        with pytest.raises(DataError):
            run_benchmark(
                world.vocab,
                (wrong, records),
                bundle(world, "id_test"),
                [bundle(world, "ood_appearance")],
                BenchmarkConfig(),
            )

    def test_multi_reference_coreset_keeps_compositional_detection(self, world):
        # larger fractions add farthest-point outliers; candidates with
        # partial component coverage must not poison reference selection
        result = run(world, alpha=0.5, coreset_fraction=0.25)
        for entries in result.coreset.classes.values():
            assert all(e.features.shape[0] >= 3 for e in entries)
        assert result.report.per_ood_set["ood_compositional"]["auroc"] >= 0.8

    def test_report_snapshot_contents(self, world):
        report = run(world, alpha=0.25, seed=77).report
        snap = report.config
        assert snap["alpha"] == 0.25
        assert snap["seed"] == 77
        assert snap["score_orientation"] == "higher_is_id"
        assert "workers" not in snap
        assert set(snap["blur"]) == {"sigma_fraction", "radius_sigmas"}
