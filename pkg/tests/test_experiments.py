"""Orchestration tests on the tiny dataset (CLI end to end where cheap)."""

import json
import os
import stat
import textwrap

import numpy as np
import pytest

from relaylab.cli import main as cli_main
from relaylab.config import parse_config
from relaylab.errors import ConfigError
from relaylab.experiments import (load_database, load_pca, load_trajectories,
                                  run_evaluate)
from relaylab.formats import read_manifest, read_trajectory, write_latents

from conftest import eval_section


def run_cli(*argv):
    return cli_main(list(argv))


class TestGenerate:
    def test_outputs_and_manifest(self, tiny_dataset):
        manifest = read_manifest(tiny_dataset["source_manifest"])
        assert len(manifest) == 4
        assert [m[0] for m in manifest] == [0, 1, 2, 3]
        trajectory = read_trajectory(manifest[0][2], trajectory_id=0)
        assert trajectory.n_frames == 16
        echo = tiny_dataset["root"] / "source" / "generate-resolved.cfg"
        assert echo.exists()

    def test_rerun_bit_identical(self, tiny_dataset, tmp_path):
        cfg = tmp_path / "regen.cfg"
        cfg.write_text(textwrap.dedent(f"""\
            [generate]
            nu = 1e-3
            n_trajectories = 2
            n_frames = 4
            base_seed = 100
            out_dir = {tmp_path / 'a'}
            forcing_amplitude = 0.001
            dt = 0.1
            spinup_time = 1.0
            ic_kind = vortex_blobs
            ic_scale = 0.002
            """))
        assert run_cli("generate", "--config", str(cfg)) == 0
        first = (tmp_path / "a" / "traj_00000.vrt1").read_bytes()
        assert run_cli("generate", "--config", str(cfg)) == 0
        assert (tmp_path / "a" / "traj_00000.vrt1").read_bytes() == first

    def test_worker_count_invariance(self, tiny_dataset, tmp_path):
        body = textwrap.dedent(f"""\
            [generate]
            nu = 1e-3
            n_trajectories = 3
            n_frames = 3
            base_seed = 55
            block_size = 2
            out_dir = %s
            forcing_amplitude = 0.001
            dt = 0.1
            spinup_time = 0.5
            ic_kind = vortex_blobs
            ic_scale = 0.002
            """)
        cfg1 = tmp_path / "w1.cfg"
        cfg1.write_text(body % (tmp_path / "w1"))
        cfg2 = tmp_path / "w2.cfg"
        cfg2.write_text(body % (tmp_path / "w2"))
        assert run_cli("generate", "--config", str(cfg1), "--workers", "1") == 0
        assert run_cli("generate", "--config", str(cfg2), "--workers", "2") == 0
        for name in ("traj_00000.vrt1", "traj_00002.vrt1"):
            assert (tmp_path / "w1" / name).read_bytes() == \
                (tmp_path / "w2" / name).read_bytes()


class TestPcaAndDb:
    def test_pca_fit_and_db_build(self, tiny_dataset, tmp_path):
        pca_cfg = tmp_path / "pca.cfg"
        pca_cfg.write_text(textwrap.dedent(f"""\
            [pca-fit]
            manifest = {tiny_dataset['source_manifest']}
            frame_lo = 2
            frame_hi = 11
            n_components = 8
            out_path = {tmp_path / 'pca.npz'}
            """))
        assert run_cli("pca-fit", "--config", str(pca_cfg)) == 0
        model = load_pca(tmp_path / "pca.npz")
        assert model.n_components == 8

        db_cfg = tmp_path / "db.cfg"
        db_cfg.write_text(textwrap.dedent(f"""\
            [db-build]
            manifest = {tiny_dataset['source_manifest']}
            encoder = pca
            pca_model = {tmp_path / 'pca.npz'}
            frame_lo = 2
            frame_hi = 11
            out_path = {tmp_path / 'db.npz'}
            """))
        assert run_cli("db-build", "--config", str(db_cfg)) == 0
        db = load_database(tmp_path / "db.npz")
        assert len(db) == 4 * 9
        assert db.dim == 8

    def test_db_build_rejects_wrong_regime(self, tiny_dataset, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(textwrap.dedent(f"""\
            [db-build]
            manifest = {tiny_dataset['eval_manifest']}
            encoder = raw
            frame_lo = 2
            frame_hi = 11
            expected_nu = 1e-3
            out_path = {tmp_path / 'db.npz'}
            """))
        assert run_cli("db-build", "--config", str(cfg)) == 1
        assert not (tmp_path / "db.npz").exists()


class TestEvaluate:
    def test_methods_grid(self, tiny_dataset, tmp_path):
        out = tmp_path / "eval-out"
        cfg = tmp_path / "ev.cfg"
        cfg.write_text("[evaluate]\n" + eval_section(
            tiny_dataset, out, "methods = persistence, pca-relay, knn-copy\n"))
        assert run_cli("evaluate", "--config", str(cfg)) == 0
        payload = json.loads((out / "records.json").read_text())
        methods = {r["method"] for r in payload["records"]}
        assert methods == {"persistence", "pca-relay", "knn-copy"}
        for record in payload["records"]:
            assert record["regime"] == "nu=0.0001"
            assert len(record["per_step"]) == 5
            assert record["ci"][0] <= record["mean_error"] <= record["ci"][1]
            assert record["config_hash"] == payload["config_hash"]
        assert payload["figures"]["fig2_cosine"]
        assert payload["figures"]["fig3_spectral"]

    def test_evaluation_never_writes_to_inputs(self, tiny_dataset, tmp_path):
        out = tmp_path / "ro-out"
        cfg = tmp_path / "ro.cfg"
        cfg.write_text("[evaluate]\n" + eval_section(
            tiny_dataset, out, "methods = persistence, pca-relay\n"))
        source_dir = tiny_dataset["source_manifest"].parent
        eval_dir = tiny_dataset["eval_manifest"].parent
        saved = {}
        for d in (source_dir, eval_dir):
            for f in d.iterdir():
                saved[f] = f.stat().st_mode
                f.chmod(stat.S_IRUSR)
            saved[d] = d.stat().st_mode
            d.chmod(stat.S_IRUSR | stat.S_IXUSR)
        try:
            assert run_cli("evaluate", "--config", str(cfg)) == 0
        finally:
            for path, mode in saved.items():
                path.chmod(mode)

    def test_external_latents_path(self, tiny_dataset, tmp_path):
        # synthetic LTN1 covering source db frames and eval query frames
        src = load_trajectories(tiny_dataset["source_manifest"])
        ev = load_trajectories(tiny_dataset["eval_manifest"])
        keys, vecs = [], []
        rng = np.random.default_rng(0)
        proj = rng.standard_normal((4096, 16))
        for t in src + ev:
            for f in range(t.n_frames):
                keys.append((t.trajectory_id, f))
                vecs.append(t.frames[f].reshape(-1).astype(np.float64) @ proj)
        lat = tmp_path / "lat.ltn1"
        write_latents(lat, keys, np.asarray(vecs, dtype=np.float32))

        out = tmp_path / "ext-out"
        cfg = tmp_path / "ext.cfg"
        cfg.write_text("[ablate-2x2]\n" + eval_section(
            tiny_dataset, out, f"latents = {lat}\n"))
        assert run_cli("ablate-2x2", "--config", str(cfg)) == 0
        payload = json.loads((out / "records.json").read_text())
        methods = [r["method"] for r in payload["records"]]
        assert "external-relay" in methods
        assert len(methods) == 5


class TestAblations:
    def test_oracle_grid(self, tiny_dataset, tmp_path):
        out = tmp_path / "oracle-out"
        cfg = tmp_path / "or.cfg"
        cfg.write_text("[ablate-oracle]\n" + eval_section(
            tiny_dataset, out, "alpha_grid = 1.0, 2.0\n"))
        assert run_cli("ablate-oracle", "--config", str(cfg)) == 0
        payload = json.loads((out / "records.json").read_text())
        variants = [r.get("variant") for r in payload["records"]]
        assert variants.count("oracle-alpha") == 2
        methods = [r["method"] for r in payload["records"]]
        assert "standard" in methods and "oracle-magnitude" in methods
        assert "oracle-alpha-best" in methods

    def test_dbsize_ride_horizon_history(self, tiny_dataset, tmp_path):
        for command, extra, expect in (
                ("ablate-dbsize", "subset_sizes = 2, 4\n", 2),
                ("ablate-ride", "ride_grid = 1, 3\n", 2),
                ("ablate-horizon", "horizons = 3, 5\n", 4),
                ("ablate-history", "history_length = 2\n", 3)):
            out = tmp_path / f"{command}-out"
            cfg = tmp_path / f"{command}.cfg"
            cfg.write_text(f"[{command}]\n" + eval_section(tiny_dataset, out,
                                                           extra))
            assert run_cli(command, "--config", str(cfg)) == 0, command
            payload = json.loads((out / "records.json").read_text())
            assert len(payload["records"]) == expect, command

    def test_dbsize_rejects_oversized_subset(self, tiny_dataset, tmp_path):
        out = tmp_path / "oversize"
        cfg = tmp_path / "big.cfg"
        cfg.write_text("[ablate-dbsize]\n" + eval_section(
            tiny_dataset, out, "subset_sizes = 64\n"))
        assert run_cli("ablate-dbsize", "--config", str(cfg)) == 1


class TestRolloutCommand:
    def test_single_method_run(self, tiny_dataset, tmp_path):
        out = tmp_path / "roll-out"
        cfg = tmp_path / "roll.cfg"
        cfg.write_text("[rollout]\n" + eval_section(
            tiny_dataset, out,
            "encoder = raw\nupdate_rule = copy\nmethod_label = knn-copy\n"))
        assert run_cli("rollout", "--config", str(cfg)) == 0
        payload = json.loads((out / "records.json").read_text())
        assert payload["records"][0]["method"] == "knn-copy"
        assert "matched_stats" in payload["records"][0]


class TestExportCsv:
    def test_long_format_and_stable_sort(self, tiny_dataset, tmp_path):
        out = tmp_path / "ev2-out"
        cfg = tmp_path / "ev2.cfg"
        cfg.write_text("[evaluate]\n" + eval_section(
            tiny_dataset, out, "methods = persistence, pca-relay\n"))
        assert run_cli("evaluate", "--config", str(cfg)) == 0
        csv_cfg = tmp_path / "csv.cfg"
        csv_cfg.write_text(textwrap.dedent(f"""\
            [export-csv]
            records = {out}
            out_path = {tmp_path / 'fig.csv'}
            """))
        assert run_cli("export-csv", "--config", str(csv_cfg)) == 0
        lines = (tmp_path / "fig.csv").read_text().splitlines()
        assert lines[0] == "figure,method,regime,step_or_shell,value,lo,hi,config_hash"
        body = lines[1:]
        assert body == sorted(body)
        assert any(line.startswith("table2,persistence") for line in body)

    def test_rerun_identical(self, tiny_dataset, tmp_path):
        out = tmp_path / "ev3-out"
        cfg = tmp_path / "ev3.cfg"
        cfg.write_text("[evaluate]\n" + eval_section(
            tiny_dataset, out, "methods = persistence\n"))
        assert run_cli("evaluate", "--config", str(cfg)) == 0
        first = (out / "records.json").read_bytes()
        assert run_cli("evaluate", "--config", str(cfg)) == 0
        assert (out / "records.json").read_bytes() == first
