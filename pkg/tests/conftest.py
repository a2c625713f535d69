import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Table 2 group-size patterns of the random-effects study
PATTERNS = {
    1: (1, 1, 1, 1, 1, 100),
    2: (2, 2, 2, 2, 2, 100),
    3: (2, 5, 60),
    4: (4, 4, 4, 8, 48),
    5: (5, 10, 15, 20, 25, 30),
    6: (2, 2, 4, 6),
    7: (6, 6, 8, 8, 10, 10),
}


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "gfi_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
