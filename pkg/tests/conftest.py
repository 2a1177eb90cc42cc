import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or rep.failed:
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if rep.failed and not detail:
            detail = str(rep.longrepr).strip().splitlines()[-1][:160]
        prev = _criteria.get(number)
        ok = rep.passed and (prev is None or prev[1])
        _criteria[number] = (title, ok, detail or (prev[2] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok, detail = _criteria[number]
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture(scope="session")
def balanced_run():
    """Default config on the balanced synthetic task (n=2000); returns ``(state, dataset, seconds)``."""
    import time

    from kanmcp.config import RunConfig
    from kanmcp.data import SynthSpec, standardize, synth_generate
    from kanmcp.model import new_state, train_epoch

    t0 = time.perf_counter()
    ds = standardize(synth_generate(SynthSpec(n=2000, label_fn="balanced", seed=0)))
    cfg = RunConfig()
    state = new_state(cfg.hyper(ds.dims), ds.stats)
    for _ in range(cfg.epochs):
        train_epoch(state, ds.train, cfg.batch_size, cfg.seed, cfg.mcpareto)
    return state, ds, time.perf_counter() - t0
