import json

import pytest

from mgda import cli, config, svg
from mgda.config import ConfigError, load_config

TINY = ["maze.kind=\"discrete\"", "data.n_traj=20", "data.T=12", "dynamics.epochs=2", "train.steps=20",
        "train.batch=32", "eval.n_pairs=5", "eval.n_boot=50", "cluster.C=4"]


def _run(tmp_path, *args):
    return cli.main([*args, "--out", str(tmp_path), *TINY])


def test_override_parsing_and_precedence(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"data": {"n_traj": 7, "T": 9}}))
    cfg = load_config(f, ["data.T=11", "maze.cuts=[2]"])
    assert cfg["data"]["n_traj"] == 7
    assert cfg["data"]["T"] == 11
    assert cfg["maze"]["cuts"] == [2]
    assert cfg["train"]["steps"] == config.DEFAULTS["train"]["steps"]


@pytest.mark.parametrize("bad", ["nope.x=1", "data=3", "data.n_traj"])
def test_bad_overrides_rejected(bad):
    with pytest.raises(ConfigError):
        load_config(overrides=[bad])


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    f = tmp_path / "bad.json"
    f.write_text("{\n  \"data\": ,\n}")
    with pytest.raises(ConfigError, match="line 2"):
        load_config(f)


def test_config_hash_ignores_key_order():
    a = {"x": 1, "y": {"b": 2, "a": 3}}
    b = {"y": {"a": 3, "b": 2}, "x": 1}
    assert config.config_hash(a) == config.config_hash(b)


def test_seed_flag_fans_out():
    args = cli.build_parser().parse_intermixed_args(["train", "--seed", "4", "--strategy", "sgda"])
    cfg = cli.resolve_config(args)
    assert cfg["data"]["seed"] == cfg["train"]["seed"] == cfg["eval"]["seed"] == 4
    assert cfg["augment"]["strategy"] == "sgda"


def test_unknown_command_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1


def test_missing_prerequisites(tmp_path, capsys):
    assert _run(tmp_path, "fit-dynamics") == 1
    assert "run gen-data first" in capsys.readouterr().err
    assert _run(tmp_path, "gen-data") == 0
    assert _run(tmp_path, "train", "--strategy", "mgda") == 1
    assert "run fit-dynamics first" in capsys.readouterr().err
    assert _run(tmp_path, "eval") == 1


def test_invalid_value_exits_one(tmp_path, capsys):
    assert cli.main(["gen-data", "--out", str(tmp_path), "data.n_traj=0"]) == 1
    assert "error" in capsys.readouterr().err


def test_full_pipeline_is_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        for cmd in (["gen-data"], ["fit-dynamics"], ["cluster"], ["train", "--strategy", "none"],
                    ["train", "--strategy", "mgda"], ["eval"]):
            assert _run(d, *cmd) == 0, cmd
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir()) if not p.name.startswith("manifest")})
    assert outs[0].keys() == outs[1].keys()
    assert {"dataset.jsonl", "dynamics.json", "certificate.json", "clusters.json", "policy_none.json",
            "policy_mgda.json", "eval.csv"} <= set(outs[0])
    for k in outs[0]:
        assert outs[0][k] == outs[1][k], k


def test_manifest_records_hashes(tmp_path):
    assert _run(tmp_path, "gen-data") == 0
    assert _run(tmp_path, "cluster") == 0
    man = json.loads((tmp_path / "manifest_cluster.json").read_text())
    assert man["command"] == "cluster"
    assert man["inputs"]["dataset.jsonl"] == config.file_hash(tmp_path / "dataset.jsonl")
    assert man["outputs"]["clusters.json"] == config.file_hash(tmp_path / "clusters.json")
    assert man["config_hash"] == config.config_hash(man["config"])
    assert {"numpy", "scipy", "python", "mgda"} <= set(man["versions"])


def test_audit_writes_matrix(tmp_path, capsys):
    assert cli.main(["audit", "--out", str(tmp_path), "audit.n_draws=500"]) == 0
    text = (tmp_path / "audit_matrix.txt").read_text()
    assert text.splitlines()[0].split() == ["strategy", "diversity", "optimality", "reachability"]
    assert [ln.split()[0] for ln in text.splitlines()[1:]] == ["sgda", "tgda", "mgda"]
    assert capsys.readouterr().out == text


def test_bar_chart_is_svg():
    out = svg.bar_chart(["stitching"], {"none": [(0.5, 0.4, 0.6)], "mgda": [(0.9, 0.8, 1.0)]}, title="a<b")
    assert out.startswith("<svg") and out.rstrip().endswith("</svg>")
    assert "a&lt;b" in out
    assert out.count("<rect") >= 2
