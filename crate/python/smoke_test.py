"""Smoke test for the agent_arena extension module.

Build first with `pip install --no-build-isolation ./crates/py`, then run
`python python/smoke_test.py` from the repository root.
"""

import json
import math
from pathlib import Path

import agent_arena

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


def main() -> None:
    p = agent_arena.price_impact(100.0, 110.0, 10.0, 1.0, 90.0)
    assert math.isclose(p, 101.0, rel_tol=1e-12), p
    assert math.isclose(agent_arena.clamp_to_daily_cap(120.0, 100.0, 0.1), 110.0)

    m = agent_arena.metrics([100.0, 110.0, 99.0])
    assert math.isclose(m["tr_pct"], -1.0, rel_tol=1e-12), m
    assert agent_arena.metrics([5.0, 5.0, 5.0])["sr"] is None

    cfg = (FIXTURES / "nine_agents.toml").read_text()
    log = agent_arena.run_arena(cfg, str(FIXTURES))
    assert log == agent_arena.run_arena(cfg, str(FIXTURES)), "runs with one seed must match"
    kinds = [json.loads(line)["type"] for line in log.splitlines()]
    assert kinds.count("roll_day") == 5 and kinds.count("decision") >= 45

    state = agent_arena.replay(log)
    assert state["days"] == 5 and len(state["accounts"]) == 9
    assert len(agent_arena.audit_conservation(log)) == 5

    rows = agent_arena.report(log)["rows"]
    assert [r["agent"] for r in rows][:2] == ["Amy", "Bruce"]
    print(agent_arena.report_text(log))

    arena = agent_arena.Arena(cfg, str(FIXTURES))
    arena.run_day()
    assert len(arena.accounts()) == 9 and arena.final_state()["days"] == 1

    bt_cfg = (FIXTURES / "backtest.toml").read_text()
    reports = agent_arena.backtest(bt_cfg, str(FIXTURES / "data"), str(FIXTURES))
    assert {r["agent"] for r in reports} >= {"sma", "buy_hold", "zmr", "macd"}

    print("smoke test passed")


if __name__ == "__main__":
    main()
