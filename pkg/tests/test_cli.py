import argparse
import json

import pytest

from tierplan import documents
from tierplan.cli import main, parse_grid
from tierplan.errors import EXIT_CONFIG, EXIT_GUARD, EXIT_OK, EXIT_VERIFICATION
from tests.conftest import fixture_path

CAPS = {"device": {"cpu_score": 1}, "edge": {"cpu_score": 4, "gpu_score": 4},
        "cloud": {"cpu_score": 16, "gpu_score": 48}}


def run(tmp_path, *args) -> int:
    return main(["--output-dir", str(tmp_path), "--log-level", "WARNING", *args])


def weights(graph: str, profile: str) -> list[str]:
    return ["--graph", str(fixture_path(graph)), "--profile", str(fixture_path(profile)),
            "--bandwidth", str(fixture_path("wifi_bandwidth.json"))]


def write(tmp_path, name: str, doc: dict) -> str:
    return str(documents.write_json(tmp_path / name, doc))


class TestPlanCommand:
    def test_three_stage_chain(self, tmp_path):
        assert run(tmp_path, "plan", *weights("three_stage_graph.json", "three_stage_profile.json")) == EXIT_OK
        doc = json.loads((tmp_path / "plan.json").read_text())
        assert doc["schema"] == "tierplan.plan"
        assert doc["assignment"] == {"v0": "d", "v1": "d", "v2": "e", "v3": "c"}
        assert doc["theta"] == pytest.approx(7.2e-3, rel=1e-12)
        assert (tmp_path / "plan.md").exists()

    def test_incremental_update(self, tmp_path):
        code = run(tmp_path, "plan", *weights("branching_graph.json", "branching_profile.json"),
                   "--perturbation", str(fixture_path("branching_perturbation.json")),
                   "--thresholds", str(fixture_path("thresholds.json")))
        assert code == EXIT_OK
        doc = json.loads((tmp_path / "plan.json").read_text())
        assert doc["provenance"] in ("incremental", "full")
        assert set(doc["assignment"]) == {f"v{i}" for i in range(14)}

    def test_network_preset_flag(self, tmp_path):
        code = run(tmp_path, "plan", "--graph", str(fixture_path("three_stage_graph.json")),
                   "--profile", str(fixture_path("three_stage_profile.json")), "--network", "4g")
        assert code == EXIT_OK

    def test_missing_bandwidth(self, tmp_path):
        code = run(tmp_path, "plan", "--graph", str(fixture_path("three_stage_graph.json")),
                   "--profile", str(fixture_path("three_stage_profile.json")))
        assert code == EXIT_CONFIG

    def test_missing_file(self, tmp_path):
        assert run(tmp_path, "plan", "--graph", str(tmp_path / "absent.json"), "--network", "wifi") == EXIT_CONFIG


class TestTileCommand:
    def test_stack_document(self, tmp_path):
        code = run(tmp_path, "tile", "--stack", str(fixture_path("small_padded_stack.json")), "--grid", "2x2")
        assert code == EXIT_OK
        doc = json.loads((tmp_path / "tiles.json").read_text())
        assert doc["grid"] == [2, 2]
        for cell in doc["cells"]:
            assert cell["tiles"][0]["alpha"] == [0, 0]
            assert cell["tiles"][0]["beta"] == [2, 2]
        assert doc["redundancy"]["layers"][0]["factor"] == 4.0

    def test_edge_chain_from_plan(self, tmp_path):
        plan = write(tmp_path, "vgg_plan.json", {"assignment": {
            "v0": "d", "conv1": "e", "relu1": "e", "pool1": "e", "fc1": "c"}})
        code = run(tmp_path, "tile", *weights("vgg_block_graph.json", "vgg_block_profile.json"),
                   "--plan", plan, "--grid", "2x2")
        assert code == EXIT_OK
        doc = json.loads((tmp_path / "tiles.json").read_text())
        assert doc["chain"] == ["conv1", "relu1", "pool1"]

    def test_grid_required(self, tmp_path):
        assert run(tmp_path, "tile", "--stack", str(fixture_path("small_padded_stack.json"))) == EXIT_CONFIG

    def test_grid_too_large(self, tmp_path):
        code = run(tmp_path, "tile", "--stack", str(fixture_path("small_padded_stack.json")), "--grid", "3x1")
        assert code == EXIT_CONFIG

    def test_bad_grid_syntax(self, tmp_path):
        with pytest.raises(SystemExit):
            run(tmp_path, "tile", "--stack", str(fixture_path("small_padded_stack.json")), "--grid", "2by2")


class TestSimulateCommand:
    def test_plan_with_edge_grid(self, tmp_path):
        plan = write(tmp_path, "vgg_plan.json", {"assignment": {
            "v0": "d", "conv1": "e", "relu1": "e", "pool1": "e", "fc1": "c"}})
        code = run(tmp_path, "simulate", *weights("vgg_block_graph.json", "vgg_block_profile.json"),
                   "--plan", plan, "--grid", "2x2")
        assert code == EXIT_OK
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["backbone_bytes"] == 256
        assert doc["edge_parallel"]["grid"] == [2, 2]
        assert (tmp_path / "report.csv").exists()
        assert (tmp_path / "report.md").exists()

    def test_invalid_plan_rejected(self, tmp_path):
        plan = write(tmp_path, "bad_plan.json", {"assignment": {
            "v0": "d", "conv1": "c", "relu1": "e", "pool1": "e", "fc1": "c"}})
        code = run(tmp_path, "simulate", *weights("vgg_block_graph.json", "vgg_block_profile.json"),
                   "--plan", plan)
        assert code == EXIT_CONFIG

    def test_sweep(self, tmp_path):
        code = run(tmp_path, "simulate", *weights("three_stage_graph.json", "three_stage_profile.json"),
                   "--sweep-link", "device_cloud", "--sweep-values", "5,20,80")
        assert code == EXIT_OK
        lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 4
        assert lines[0].startswith("link,mbps,theta_ms")

    @pytest.mark.parametrize("preset", ["wifi", "4g", "5g", "optical"])
    def test_stage_chain_on_presets(self, tmp_path, preset):
        code = run(tmp_path, "simulate", "--graph", str(fixture_path("darknet53_stages_graph.json")),
                   "--profile", str(fixture_path("darknet53_stages_profile.json")), "--network", preset)
        assert code == EXIT_OK
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["theta"] < min(doc["baselines"].values())
        assert "device-cloud-split" in doc["baselines"]


class TestOracleCommand:
    def test_random_instances(self, tmp_path):
        assert run(tmp_path, "oracle", "--random", "5", "--vertices", "6", "--seed", "3") == EXIT_OK
        doc = json.loads((tmp_path / "oracle.json").read_text())
        assert doc["summary"]["trials"] == 5
        for row in doc["trials"]:
            assert row["theta_opt"] <= row["theta_hpa"] * (1 + 1e-12)

    def test_fixture_graph(self, tmp_path):
        code = run(tmp_path, "oracle", *weights("three_stage_graph.json", "three_stage_profile.json"))
        assert code == EXIT_OK
        doc = json.loads((tmp_path / "oracle.json").read_text())
        assert doc["summary"]["exact"] == 1

    def test_twelve_vertex_instances_report_gaps(self, tmp_path):
        assert run(tmp_path, "oracle", "--random", "3", "--vertices", "12", "--seed", "4") == EXIT_OK
        summary = json.loads((tmp_path / "oracle.json").read_text())["summary"]
        assert summary["trials"] == 3
        assert summary["max_gap"] >= summary["mean_gap"]
        assert (tmp_path / "oracle.csv").exists()

    def test_size_guard(self, tmp_path):
        assert run(tmp_path, "oracle", "--random", "1", "--vertices", "20") == EXIT_GUARD


class TestVerifyTilesCommand:
    def test_random_stacks(self, tmp_path):
        assert run(tmp_path, "verify-tiles", "--trials", "5", "--seed", "11") == EXIT_OK
        doc = json.loads((tmp_path / "verify.json").read_text())
        assert doc["failures"] == []

    def test_fault_injection_is_caught(self, tmp_path):
        stack = write(tmp_path, "stack.json", {"input_dims": [6, 6, 1], "layers": [
            {"kind": "conv", "filter": [3, 3], "filters": 2, "stride": 1, "padding": 1}]})
        code = run(tmp_path, "verify-tiles", "--trials", "3", "--stack", stack, "--grid", "2x1",
                   "--fault-injection")
        assert code == EXIT_VERIFICATION
        doc = json.loads((tmp_path / "verify.json").read_text())
        assert doc["fault_injection"] is True
        assert doc["failures"]

    def test_fault_injection_fails_random_trials(self, tmp_path):
        code = run(tmp_path, "verify-tiles", "--trials", "50", "--seed", "12", "--fault-injection")
        assert code == EXIT_VERIFICATION
        doc = json.loads((tmp_path / "verify.json").read_text())
        assert doc["fault_injection"] is True
        assert doc["trials"] == 50
        assert len(doc["failures"]) >= 1

    def test_fixed_stack_needs_grid(self, tmp_path):
        code = run(tmp_path, "verify-tiles", "--stack", str(fixture_path("small_padded_stack.json")))
        assert code == EXIT_CONFIG


class TestEstimateCommand:
    def test_fit_then_predict(self, tmp_path):
        samples = []
        for i, (w, n) in enumerate([(4, 1), (6, 2), (8, 3), (10, 2), (12, 4), (14, 1)]):
            layer = {"kind": "conv", "input_dims": [w, w, 2], "filter": [3, 3], "filters": n,
                     "stride": 1, "padding": 1}
            for tier, scale in (("device", 1.0), ("edge", 0.25), ("cloud", 0.05)):
                samples.append({"layer": layer, "tier": tier, "seconds": scale * (1 + i) * w * n})
        samples_path = write(tmp_path, "samples.json", {"unit": "ms", "capabilities": CAPS, "samples": samples})
        assert run(tmp_path, "estimate", "fit", "--samples", samples_path) == EXIT_OK
        assert (tmp_path / "model.json").exists()

        caps_path = write(tmp_path, "caps.json", {"tiers": CAPS})
        code = run(tmp_path, "estimate", "predict", "--graph", str(fixture_path("vgg_block_graph.json")),
                   "--model", str(tmp_path / "model.json"), "--capabilities", caps_path, "--network", "wifi")
        assert code == EXIT_OK
        doc = json.loads((tmp_path / "profile.json").read_text())
        assert set(doc["times"]) == {"v0", "conv1", "relu1", "pool1", "fc1"}
        assert all(t >= 0 for times in doc["times"].values() for t in times.values())

    def test_alexnet_samples_drive_a_plan(self, tmp_path):
        code = run(tmp_path, "estimate", "fit", "--samples", str(fixture_path("alexnet_samples.json")))
        assert code == EXIT_OK
        model = json.loads((tmp_path / "model.json").read_text())
        assert len(model["buckets"]) == 12
        assert any(line.startswith("fully-connected@") for line in model["diagnostics"])

        caps_path = write(tmp_path, "caps.json", {"tiers": CAPS})
        code = run(tmp_path, "estimate", "predict", "--graph", str(fixture_path("vgg_block_graph.json")),
                   "--model", str(tmp_path / "model.json"), "--capabilities", caps_path, "--network", "wifi")
        assert code == EXIT_OK
        profile = json.loads((tmp_path / "profile.json").read_text())
        assert set(profile["times"]) == {"v0", "conv1", "relu1", "pool1", "fc1"}

        code = run(tmp_path, "plan", "--graph", str(fixture_path("vgg_block_graph.json")),
                   "--profile", str(tmp_path / "profile.json"), "--network", "wifi")
        assert code == EXIT_OK
        plan = json.loads((tmp_path / "plan.json").read_text())
        assert set(plan["assignment"]) == set(profile["times"])

    def test_fit_needs_samples(self, tmp_path):
        assert run(tmp_path, "estimate", "fit") == EXIT_CONFIG


class TestParseGrid:
    def test_valid(self):
        assert parse_grid("3x2") == (3, 2)
        assert parse_grid("1X1") == (1, 1)

    def test_non_positive(self):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_grid("0x2")
