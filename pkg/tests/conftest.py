import contextlib
import io
import json

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def away_from_zero(rng, shape, margin=0.1, scale=1.0):
    """Random values with |x| >= margin, for ops with a kink at 0."""
    x = rng.uniform(margin, scale, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def run_cli(*argv):
    """(exit code, JSON records from stdout, stderr text) of an in-process CLI call."""
    from neopain import cli

    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main([str(a) for a in argv])
    records = [json.loads(line) for line in out.getvalue().splitlines() if line.strip()]
    return code, records, err.getvalue()


def cli_ok(*argv):
    code, records, err = run_cli(*argv)
    assert code == 0, err
    return records
