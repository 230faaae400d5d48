from pathlib import Path

import pytest

from pacfno.evaluation import RunConfig, run_experiment

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.json"

_outcomes: dict[str, list[tuple[str, str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.failed):
        return
    status = "PASS" if report.passed else "FAIL"
    _outcomes.setdefault(str(marker.args[0]), []).append((item.name, status))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_outcomes, key=lambda k: (int(k.rstrip("abc")), k)):
        results = _outcomes[key]
        status = "PASS" if all(s == "PASS" for _, s in results) else "FAIL"
        names = ", ".join(name for name, _ in results)
        terminalreporter.write_line(f"criterion {key}: {status}  ({names})")


@pytest.fixture(scope="session")
def desk_config():
    cfg = RunConfig.load(DESK)
    if not Path(cfg.out).is_absolute():
        cfg.out = str(ROOT / cfg.out)
    return cfg


@pytest.fixture(scope="session")
def desk(desk_config):
    """The desk-scale experiment; checkpoints under runs/desk are reused while the config digest matches."""
    report = run_experiment(desk_config)
    meta = report.metadata
    print(f"desk run: trained {meta['trained'] or 'nothing (checkpoints reused)'}, {meta['wall_clock_s']:.0f}s")
    return report
