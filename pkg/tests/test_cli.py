import json
import subprocess
import sys
import time

import pytest

from tunearena import planfile
from tunearena.cli import main
from tunearena.tournament import run_tournament

TOY_PLAN = """\
seed: 3
benchmarks:
  - kind: synthetic-add
    noise_sigma: 0
  - kind: synthetic-harris
strategies: [random-search, genetic, bo-tpe, exhaustive]
space: {xt: [1, 4], yt: [1, 4], zt: [1, 4], xw: [1, 2], yw: [1, 2], zw: [1, 2]}
sample_sizes: [25, 50]
experiments: [3, 2]
final_repetitions: 2
"""


@pytest.fixture
def plan_path(tmp_path):
    p = tmp_path / "plan.yaml"
    p.write_text(TOY_PLAN)
    return p


def store_bytes(store):
    return {p.relative_to(store).as_posix(): p.read_bytes() for p in sorted(store.rglob("*")) if p.is_file()}


class TestPlanFile:
    def test_unknown_key_line(self):
        with pytest.raises(planfile.PlanError, match=r"plan.yaml:11: unknown key foo"):
            planfile.parse_plan(TOY_PLAN + "foo: 1\n", "plan.yaml")

    def test_unknown_nested_key(self):
        text = TOY_PLAN.replace("    noise_sigma: 0", "    noise_sigma: 0\n    colour: red")
        with pytest.raises(planfile.PlanError, match=r":5: .*colour"):
            planfile.parse_plan(text, "plan.yaml")

    def test_unknown_strategy(self):
        with pytest.raises(planfile.PlanError, match="simulated-annealing"):
            planfile.parse_plan(TOY_PLAN.replace("bo-tpe", "simulated-annealing"))

    def test_budget_checked(self):
        with pytest.raises(planfile.PlanError, match="genetic"):
            planfile.parse_plan(TOY_PLAN.replace("[25, 50]", "[5, 50]"))

    def test_ga_override_checked(self):
        text = TOY_PLAN + "options:\n  ga: {population: 10, generations: 3}\n"
        with pytest.raises(planfile.PlanError, match="population"):
            planfile.parse_plan(text)

    def test_defaults(self):
        plan = planfile.parse_plan("benchmarks: [synthetic-add]\nstrategies: [random-search]\n").plan
        assert plan.sample_sizes == (25, 50, 100, 200, 400)
        assert plan.experiments_per_size == (800, 400, 200, 100, 50)
        assert plan.final_repetitions == 10 and plan.benchmarks[0].noise_sigma == 0.05

    def test_resolved_dump_round_trip(self, plan_path):
        plan = planfile.load_plan_file(plan_path).plan
        again = planfile.parse_plan(planfile.dump_resolved(plan)).plan
        assert again == plan
        assert again.to_dict() == plan.to_dict()

    def test_resolved_dump_runs_identically(self, plan_path, tmp_path):
        plan = planfile.load_plan_file(plan_path).plan
        again = planfile.parse_plan(planfile.dump_resolved(plan)).plan
        run_tournament(plan, tmp_path / "a")
        run_tournament(again, tmp_path / "b")
        assert store_bytes(tmp_path / "a") == store_bytes(tmp_path / "b")


class TestCommands:
    def test_validate(self, plan_path, capsys):
        assert main(["validate", str(plan_path)]) == 0
        assert "sample_sizes" in capsys.readouterr().out

    def test_malformed_plan(self, tmp_path, capsys):
        p = tmp_path / "bad.yaml"
        p.write_text(TOY_PLAN + "foo: 1\n")
        assert main(["run", str(p), "--out", str(tmp_path / "s")]) == 2
        assert "unknown key foo" in capsys.readouterr().err

    def test_unparseable_yaml(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text("benchmarks: [unclosed\n")
        assert main(["validate", str(p)]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.yaml")]) == 2

    def test_bad_arguments(self):
        assert main(["frobnicate"]) == 2

    def test_run_report_resume(self, plan_path, tmp_path, capsys):
        store = tmp_path / "store"
        assert main(["run", str(plan_path), "--out", str(store)]) == 0
        out, err = capsys.readouterr()
        assert json.loads(out)["store"] == str(store)
        assert "[40/40]" in err
        assert (store / "plan.resolved.yaml").exists()
        before = store_bytes(store)
        assert main(["run", str(plan_path), "--out", str(store), "--resume"]) == 0
        assert store_bytes(store) == before
        assert main(["report", str(store)]) == 0
        report_dir = store / "report"
        assert (report_dir / "report.json").exists()
        assert len(list(report_dir.glob("*.svg"))) == 6
        doc = json.loads((report_dir / "report.json").read_text())
        add = next(c for c in doc["cells"] if c["benchmark"] == "synthetic-add")
        assert add["percent_of_optimum"]["exhaustive"] == 100.0

    def test_env_output_dir(self, plan_path, tmp_path, monkeypatch):
        monkeypatch.setenv("TUNEARENA_OUTPUT_DIR", str(tmp_path / "envstore"))
        assert main(["run", str(plan_path)]) == 0
        assert (tmp_path / "envstore" / "outcomes.jsonl").exists()

    def test_incomplete_store(self, plan_path, tmp_path, capsys):
        plan = planfile.load_plan_file(plan_path).plan
        run_tournament(plan, tmp_path, stop_after=4)
        assert main(["report", str(tmp_path)]) == 3
        assert "synthetic-add" in capsys.readouterr().err

    def test_report_on_missing_store(self, tmp_path):
        assert main(["report", str(tmp_path / "nothing")]) == 3

    def test_oracle_default(self, capsys):
        assert main(["oracle", "--benchmark", "synthetic-add"]) == 0
        facts = json.loads(capsys.readouterr().out)
        assert facts["total_size"] == 2_097_152 and facts["n_valid"] == 1_966_080
        assert facts["optima"]["synthetic-add"] == {"config": [1, 1, 2, 1, 4, 8], "value": 1.0}

    def test_oracle_reduced_is_fast(self, capsys):
        start = time.monotonic()
        assert main(["oracle", "--thread", "1", "4", "--workgroup", "1", "2"]) == 0
        assert time.monotonic() - start < 1.0
        assert json.loads(capsys.readouterr().out)["total_size"] == 512

    def test_oracle_rejects_external(self, tmp_path):
        p = tmp_path / "ext.yaml"
        p.write_text("benchmarks:\n  - kind: external\n    external_command: echo 1\nstrategies: [random-search]\n")
        assert main(["oracle", "--plan", str(p)]) == 2

    def test_console_script_module(self, plan_path):
        proc = subprocess.run([sys.executable, "-m", "tunearena.cli", "validate", str(plan_path)],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout
