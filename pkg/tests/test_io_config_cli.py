from dataclasses import replace

import numpy as np
import pytest

from lakevortex import cli
from lakevortex.config import ConfigError, from_dict, parse_config, parse_text
from lakevortex.geometry import Grid
from lakevortex.io import HEADER_SIZE, key_values, read_field, sha256, write_csv, write_field

SMALL = """
seed = 3

[domain]
shape = "disc"
nx = 48

[domain.depth]
kind = "radial_bump"
peak = 2.0
curvature = 1.0

[solver]
eps_schedule = [0.15, 0.12, 0.1, 0.085]
max_iter = 3000
"""


def test_field_round_trip(tmp_path):
    g = Grid(9, 11, 0.25, (-1.0, 0.5))
    vals = np.random.default_rng(0).normal(size=g.shape)
    paths = write_field(tmp_path / "z.lvf", vals, g, {"eps": 0.1})
    assert paths[1].name == "z.meta"
    raw = paths[0].read_bytes()
    assert len(raw) == HEADER_SIZE + 8 * 99
    assert raw[:4] == b"LVF1"
    back, g2 = read_field(paths[0])
    assert np.array_equal(back, vals)
    assert g2 == g
    assert "eps = 0.1" in paths[1].read_text()


def test_field_errors(tmp_path):
    g = Grid(8, 8, 0.5, (0.0, 0.0))
    with pytest.raises(ValueError):
        write_field(tmp_path / "a.lvf", np.zeros((3, 8)), g)
    (tmp_path / "bad.lvf").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        read_field(tmp_path / "bad.lvf")
    write_field(tmp_path / "t.lvf", np.zeros((8, 8)), g)
    (tmp_path / "t.lvf").write_bytes((tmp_path / "t.lvf").read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_field(tmp_path / "t.lvf")


def test_csv_full_precision(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["x", "flag", "n"], [[0.1, True, 3]])
    assert p.read_text() == "x,flag,n\n0.10000000000000001,1,3\n"
    assert float(p.read_text().split("\n")[1].split(",")[0]) == 0.1


def test_key_values():
    assert key_values({"a": {"b": 1, "c": [0.5, 2]}}) == ["a.b = 1", "a.c = 0.5, 2"]


def test_config_defaults():
    cfg = from_dict({"domain": {"shape": "disc"}})
    assert cfg.domain["nx"] == 256 and cfg.domain["radius"] == 1.0
    assert cfg.domain["depth"] == {"kind": "constant", "value": 1.0}
    assert cfg.vorticity == {"kind": "power", "p": 1.0}
    assert cfg.solver["lambda_cap"] == "auto"
    assert cfg.regime == "interior" and cfg.seed == 0


@pytest.mark.parametrize(
    "data, needle",
    [
        ({}, "domain"),
        ({"domain": {"shape": "disk"}}, "disc"),
        ({"domain": {"shape": "disc", "dept": {}}}, "depth"),
        ({"domain": {"shape": "disc"}, "solver": {"eps_schedule": [0.05, 0.1]}}, "decreasing"),
        ({"domain": {"shape": "disc"}, "solver": {"lambda_cap": "big"}}, "lambda_cap"),
        ({"domain": {"shape": "disc"}, "solver": {"eps": -1.0}}, "positive"),
        ({"domain": {"shape": "disc"}, "regime": "edge"}, "regime"),
        ({"domain": {"shape": "disc"}, "seed": -1}, "seed"),
        ({"domain": {"shape": "polygon"}}, "vertices"),
        ({"domain": {"shape": "disc"}, "stability": {"perturbation": "kick"}}, "perturbation"),
    ],
)
def test_config_errors(data, needle):
    with pytest.raises(ConfigError, match=needle):
        from_dict(data)


def test_config_round_trip():
    cfg = parse_text(SMALL)
    assert parse_text(cfg.to_toml()) == cfg
    assert cfg.eps_schedule() == [0.15, 0.12, 0.1, 0.085]


def test_packaged_configs_parse():
    from pathlib import Path

    for p in sorted(Path(__file__).parent.parent.joinpath("configs").glob("*.toml")):
        parse_config(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.toml")
    assert cli.main(["steady", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "o")]) == 2


def small_cfg(tmp_path, extra=""):
    path = tmp_path / "cfg.toml"
    path.write_text(SMALL + extra)
    return path


def test_cli_steady(tmp_path):
    path = small_cfg(tmp_path)
    path.write_text(SMALL.replace("eps_schedule = [0.15, 0.12, 0.1, 0.085]", "eps = 0.1"))
    out = tmp_path / "out"
    assert cli.main(["steady", "--config", str(path), "--out", str(out)]) == 0
    text = (out / "manifest.txt").read_text()
    assert "status = ok" in text
    z, g = read_field(out / "zeta_0.1.lvf")
    assert g.nx == 48 and z.min() >= 0
    assert (out / "iters_0.1.csv").exists()
    for line in text.split("[files]\n")[1].split("\n"):
        if "sha256:" in line:
            name, digest = line.split(" = sha256:")
            assert sha256(out / name) == digest
    echoed = cli.config_from_manifest(out / "manifest.txt")
    assert echoed == replace(parse_config(path), experiment="steady")


def test_cli_greens_and_profile(tmp_path):
    path = small_cfg(tmp_path)
    assert cli.main(["greens-check", "--config", str(path), "--out", str(tmp_path / "g")]) == 0
    assert "violations" in (tmp_path / "g" / "manifest.txt").read_text()
    assert cli.main(["profile-check", "--config", str(path), "--out", str(tmp_path / "p")]) == 0
    assert "theta0" in (tmp_path / "p" / "manifest.txt").read_text()


def test_cli_experiment_mismatch(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('experiment = "sweep"\n' + SMALL)
    assert cli.main(["steady", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


def test_cli_stage_failure_writes_manifest(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(SMALL.replace("eps_schedule = [0.15, 0.12, 0.1, 0.085]", "eps = 0.1\nlambda_cap = 0.5"))
    out = tmp_path / "o"
    assert cli.main(["steady", "--config", str(path), "--out", str(out)]) == 1
    assert "status = failed" in (out / "manifest.txt").read_text()


def test_cli_sweep_deterministic(tmp_path):
    path = small_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sweep", "--config", str(path), "--out", str(a), "--deterministic"]) == 0
    assert cli.main(["sweep", "--config", str(path), "--out", str(b), "--deterministic", "--threads", "2"]) == 0
    assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    assert (a / "fits.txt").exists()


def test_cli_stability_short(tmp_path):
    path = small_cfg(tmp_path, "\n[stability]\neps = 0.1\nsteps = 6\nrecord_every = 3\n")
    out = tmp_path / "s"
    assert cli.main(["stability", "--config", str(path), "--out", str(out)]) == 0
    rows = (out / "series.csv").read_text().strip().split("\n")
    assert len(rows) == 4
    assert (out / "zeta_final.lvf").exists()
