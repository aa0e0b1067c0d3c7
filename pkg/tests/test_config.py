"""Config parsing, validation, and hashing."""

import pytest

from relaylab.config import parse_config
from relaylab.errors import ConfigError


def write(tmp_path, body):
    path = tmp_path / "exp.cfg"
    path.write_text(body)
    return path


class TestParseConfig:
    def test_happy_path(self, tmp_path):
        path = write(tmp_path, """
[generate]
nu = 1e-3
n_trajectories = 5
base_seed = 7
out_dir = data/source
""")
        cfg = parse_config("generate", path)
        assert cfg["nu"] == 1e-3
        assert cfg["n_trajectories"] == 5
        assert cfg["n_frames"] == 50  # default
        assert cfg["out_dir"] == (tmp_path / "data/source").resolve()

    def test_unknown_key_rejected(self, tmp_path):
        path = write(tmp_path, """
[generate]
nu = 1e-3
n_trajectories = 5
base_seed = 7
out_dir = x
typo_key = 3
""")
        with pytest.raises(ConfigError, match="typo_key"):
            parse_config("generate", path)

    def test_missing_required_rejected(self, tmp_path):
        path = write(tmp_path, "[generate]\nnu = 1e-3\n")
        with pytest.raises(ConfigError, match="required"):
            parse_config("generate", path)

    def test_bad_value_rejected(self, tmp_path):
        path = write(tmp_path, """
[generate]
nu = viscous
n_trajectories = 5
base_seed = 7
out_dir = x
""")
        with pytest.raises(ConfigError, match="nu"):
            parse_config("generate", path)

    def test_unknown_command(self, tmp_path):
        path = write(tmp_path, "[generate]\n")
        with pytest.raises(ConfigError):
            parse_config("frobnicate", path)

    def test_other_sections_ignored(self, tmp_path):
        path = write(tmp_path, """
[generate]
nu = 1e-3
n_trajectories = 5
base_seed = 7
out_dir = x

[evaluate]
source_manifest = a
eval_manifest = b
out_dir = y
""")
        cfg = parse_config("generate", path)
        assert cfg["n_trajectories"] == 5

    def test_list_values(self, tmp_path):
        path = write(tmp_path, """
[ablate-dbsize]
source_manifest = a
eval_manifest = b
out_dir = y
subset_sizes = 2, 4, 8
""")
        cfg = parse_config("ablate-dbsize", path)
        assert cfg["subset_sizes"] == (2, 4, 8)

    def test_hash_tracks_content(self, tmp_path):
        body = """
[generate]
nu = 1e-3
n_trajectories = 5
base_seed = 7
out_dir = x
"""
        a = parse_config("generate", write(tmp_path, body))
        b = parse_config("generate", write(tmp_path, body))
        assert a.config_hash() == b.config_hash()
        c = parse_config("generate",
                         write(tmp_path, body.replace("seed = 7", "seed = 8")))
        assert c.config_hash() != a.config_hash()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config("generate", tmp_path / "absent.cfg")

    def test_echo_written(self, tmp_path):
        path = write(tmp_path, """
[generate]
nu = 1e-3
n_trajectories = 5
base_seed = 7
out_dir = x
""")
        cfg = parse_config("generate", path)
        cfg.write_echo(tmp_path / "out")
        echo = (tmp_path / "out" / "generate-resolved.cfg").read_text()
        assert "nu = 0.001" in echo
        assert "command = generate" in echo
