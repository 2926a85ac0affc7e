"""Test harness: run ``async def`` tests on a fresh event loop each."""

from __future__ import annotations

import asyncio
import inspect
import sys

import pytest


@pytest.hookimpl(tryfirst=True)
def pytest_pyfunc_call(pyfuncitem):
    fn = pyfuncitem.obj
    if inspect.iscoroutinefunction(fn):
        kwargs = {
            name: pyfuncitem.funcargs[name]
            for name in pyfuncitem._fixtureinfo.argnames
        }
        asyncio.run(fn(**kwargs))
        return True
    return None


def pytest_terminal_summary(terminalreporter):
    # replay the acceptance checklist past output capture
    for name, module in sys.modules.items():
        if name.rpartition(".")[2] == "test_acceptance":
            verdicts = getattr(module, "VERDICTS", None)
            if verdicts:
                terminalreporter.section("acceptance criteria")
                for line in verdicts:
                    terminalreporter.write_line(line)
