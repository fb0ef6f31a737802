def pytest_configure(config):
    """
    Ensure the repository root and ``src/`` are at the front of sys.path so
    ``gearfault`` and package-relative test imports (e.g. ``tests.conftest``)
    resolve no matter how pytest is invoked.
    """
    import importlib
    import sys
    from pathlib import Path

    repo_root = Path(__file__).resolve().parent
    for entry in (str(repo_root / "src"), str(repo_root)):
        if entry not in sys.path:
            sys.path.insert(0, entry)

    # Prime the ``tests`` package so that ``import tests.*`` works even if
    # another module named ``tests`` was imported earlier by the runtime.
    if "tests" not in sys.modules:
        try:
            importlib.import_module("tests")
        except ModuleNotFoundError:
            pass
