import pytest

from vismine import synthgui


@pytest.fixture(scope="session")
def scenario_dir(tmp_path_factory):
    """The bundled 11-step editing scenario rendered once per session."""
    out = tmp_path_factory.mktemp("scenario")
    synthgui.render_log(synthgui.load_script(synthgui.demo_path("scenario")), out)
    return out


@pytest.fixture(scope="session")
def transitions_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("transitions")
    synthgui.render_log(synthgui.load_script(synthgui.demo_path("transitions")), out)
    return out


@pytest.fixture(scope="session")
def scenario_noevents_dir(tmp_path_factory):
    """The same scenario recorded without an events stream."""
    out = tmp_path_factory.mktemp("scenario_noevents")
    script = synthgui.load_script(synthgui.demo_path("scenario"))
    script.events = False
    synthgui.render_log(script, out)
    return out


@pytest.fixture(scope="session")
def scenario_analysis(scenario_dir):
    """(log, steps, interaction sequence) for the scenario, text from the oracle."""
    from vismine import cli, tracking, vislog

    vlog = vislog.load_log(scenario_dir)
    cfg = cli.PipelineConfig(text_detector="oracle")
    steps = cli.build_steps(vlog, cfg)
    seq = tracking.infer_interactions(steps, vlog.events, vlog.has_events_stream, vlog.screen,
                                      cfg.tracking, vlog.name)
    return vlog, steps, seq


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
