def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte-Carlo checks that take minutes")
