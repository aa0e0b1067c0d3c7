"""Shared fixtures: a tiny two-regime dataset for the harness tests."""

import textwrap

import pytest

from relaylab.cli import main as cli_main


TINY_SOLVER = """\
k_f = 4
forcing_amplitude = 0.001
dt = 0.1
record_interval = 1.0
spinup_time = 1.0
ic_kind = vortex_blobs
ic_blob_strength = 0.8
ic_blob_radius = 0.8
ic_blob_min_separation = 2.0
ic_blob_anchor_spread = 0.5
ic_scale = 0.002
"""


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """4 source + 2 eval trajectories on the standard grid, fast settings."""
    root = tmp_path_factory.mktemp("tiny-data")
    src_cfg = root / "source.cfg"
    src_cfg.write_text(textwrap.dedent(f"""\
        [generate]
        nu = 1e-3
        n_trajectories = 4
        n_frames = 16
        base_seed = 100
        out_dir = source
        {TINY_SOLVER}
        """))
    eval_cfg = root / "eval.cfg"
    eval_cfg.write_text(textwrap.dedent(f"""\
        [generate]
        nu = 1e-4
        n_trajectories = 2
        n_frames = 16
        base_seed = 900
        trajectory_start = 10000
        out_dir = eval
        {TINY_SOLVER}
        """))
    assert cli_main(["generate", "--config", str(src_cfg)]) == 0
    assert cli_main(["generate", "--config", str(eval_cfg)]) == 0
    return {
        "root": root,
        "source_manifest": root / "source" / "manifest.tsv",
        "eval_manifest": root / "eval" / "manifest.tsv",
    }


def eval_section(tiny, out_dir, extra=""):
    """Config body shared by evaluation-style commands in tests."""
    return textwrap.dedent(f"""\
        source_manifest = {tiny['source_manifest']}
        eval_manifest = {tiny['eval_manifest']}
        frame_lo = 2
        frame_hi = 11
        context_frames = 4
        horizon = 5
        pca_components = 8
        bootstrap_samples = 200
        out_dir = {out_dir}
        {extra}
        """)
