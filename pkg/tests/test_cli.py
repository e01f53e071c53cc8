import json

import pytest

from mfnet.cli import main
from mfnet.oid import Oid
from mfnet.repository import Repository
from mfnet.subscription import Endpoint, Selection, Subscription


class TestUsageErrors:
    def test_no_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_missing_required_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--scenario", "x"])  # --out missing
        assert exc.value.code == 2

    def test_bad_transport_choice(self):
        with pytest.raises(SystemExit) as exc:
            main(["subscribe", "--agent", "d", "--oid", "1.3", "--period", "1000",
                  "--endpoint", "h:1", "--transport", "smoke-signal"])
        assert exc.value.code == 2


class TestSimulate:
    def test_writes_metrics_document(self, tmp_path, capsys):
        scenario = tmp_path / "s.scenario"
        scenario.write_text(
            "model = push\ntransport = datagram\nagents = 1\nvariables = 1\n"
            "period-ms = 1000\nduration-ms = 3000\nseed = 5\n")
        out = tmp_path / "metrics.json"
        assert main(["simulate", "--scenario", str(scenario),
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["availability"] == 1.0
        assert "wrote" in capsys.readouterr().out

    def test_bad_scenario_is_clean_error(self, tmp_path, capsys):
        scenario = tmp_path / "s.scenario"
        scenario.write_text("model = interpretive-dance\n")
        assert main(["simulate", "--scenario", str(scenario),
                     "--out", str(tmp_path / "m.json")]) == 1
        assert "error:" in capsys.readouterr().err


class TestDump:
    def test_dump_subscriptions(self, tmp_path, capsys):
        repo = Repository(tmp_path / "repo")
        repo.put("subscriptions", "s1", Subscription(
            id="s1", agent="dev-1",
            endpoints=[Endpoint("h", 1, "stream")],
            selections=[Selection(Oid.parse("1.3"), 1000)]))
        assert main(["dump", "--root", str(tmp_path / "repo"),
                     "--store", "subscriptions"]) == 0
        assert "sub-id s1" in capsys.readouterr().out

    def test_dump_unknown_store(self, tmp_path, capsys):
        Repository(tmp_path / "repo")
        assert main(["dump", "--root", str(tmp_path / "repo"),
                     "--store", "mysteries"]) == 1
