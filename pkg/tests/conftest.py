import sys
import numpy as np
import pytest

from trapscope import synth
from trapscope.panel import TransitionRecord
from trapscope.states import StateSpace, fit_ordinal


def index_space(n, name="s"):
    """1-D space whose ordinal levels are the state indices themselves."""
    return StateSpace((fit_ordinal(name=name, levels=list(range(n))),))


def records_from_pairs(pairs, name="s", household="h"):
    out = []
    for t, (a, b) in enumerate(pairs):
        out.append(TransitionRecord(f"{household}{t}", 2000, 2001, {name: float(a)}, {name: float(b)}, 1.0))
    return out


def records_from_sequences(seqs, name="s", start=2000):
    out = []
    for h, seq in enumerate(seqs):
        for t in range(len(seq) - 1):
            out.append(TransitionRecord(f"hh{h}", start + t, start + t + 1, {name: float(seq[t])},
                                        {name: float(seq[t + 1])}, 1.0))
    return out


@pytest.fixture(scope="session")
def fixture_panel():
    from trapscope.panel import load_panel

    panel, report = load_panel(synth.fixture_path())
    return panel, report


@pytest.fixture(scope="session")
def fixture_space():
    return StateSpace.from_json(synth.fixture_space_path().read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def fixture_config(**overrides):
    """Run configuration for the bundled fixture on its saved grid."""
    cfg = {
        "input": str(synth.fixture_path()),
        "country": "SY",
        "state_space": str(synth.fixture_space_path()),
        "dimensions": [{"name": "income", "binning": "fixed"},
                       {"name": "health", "binning": "ordinal", "levels": [1, 2, 3, 4, 5]}],
        "periods": {"pre": [2014, 2019], "during": [2019, 2023]},
        "parameters": {"bootstrap_replicates": 10},
        "seed": 7,
    }
    cfg.update(overrides)
    return cfg


def two_state_country(tmp_path, name, rate, households=3000, waves=11, seed=0):
    """Synthetic income-only country whose 2-state chain has equal up/down rate."""
    P = np.array([[1 - rate, rate], [rate, 1 - rate]])
    spec = synth.SynthSpec(space=synth.income_space(2), P=P, households=households, waves=waves, seed=seed)
    panel, truth = synth.generate_panel(spec)
    path = synth.write_synth(tmp_path, panel, truth, name)
    return {
        "input": str(path),
        "country": name,
        "schema": {"dimensions": ["income"]},
        "state_space": str(tmp_path / f"{name}_space.json"),
        "dimensions": [{"name": "income", "binning": "fixed"}],
        "stages": ["estimate", "escape"],
    }


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance verdicts")
        for line in lines:
            terminalreporter.write_line(line)
