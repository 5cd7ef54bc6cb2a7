import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import synth
from bfloc.classifier import fit_classifier
from bfloc.dataset import (
    build_reference_index,
    parse_csv,
    samples_from_records,
    split_train_val,
)
from bfloc.labels import LabelCodec

settings.register_profile(
    "deterministic",
    derandomize=True,
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("deterministic")


SPACE0 = 100


def toy_codec() -> LabelCodec:
    """The two-building example universe: A with 3 floors (2+2+3 spaces),
    B with 4 floors (2+2+4+1 spaces); 16 locations, target width 10."""
    def locs(n):
        return tuple((SPACE0 + i, 1) for i in range(n))

    return LabelCodec(
        buildings=(0, 1),
        floors=((0, 1, 2), (0, 1, 2, 3)),
        locations=(
            (locs(2), locs(2), locs(3)),
            (locs(2), locs(2), locs(4), locs(1)),
        ),
    )


@pytest.fixture(scope="session")
def example_codec() -> LabelCodec:
    return toy_codec()


@pytest.fixture(scope="session")
def campus_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "campus.csv"
    synth.write_campus_csv(path)
    return path


@pytest.fixture(scope="session")
def campus_records(campus_csv):
    return parse_csv(campus_csv)


@pytest.fixture(scope="session")
def campus_codec(campus_records):
    return LabelCodec.from_records(campus_records)


@pytest.fixture(scope="session")
def campus_samples(campus_records, campus_codec):
    return samples_from_records(campus_records, campus_codec)


@pytest.fixture(scope="session")
def campus_split(campus_samples):
    return split_train_val(campus_samples, 0.70, seed=7)


@pytest.fixture(scope="session")
def campus_index(campus_split):
    return build_reference_index(campus_split[0])


@pytest.fixture(scope="session")
def campus_model(campus_split, campus_codec):
    """A model trained long enough to classify the synthetic campus well."""
    train, _ = campus_split
    model, report = fit_classifier(
        train,
        campus_codec,
        seed=8,
        epochs=12,
        batch_size=10,
    )
    return model, report


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


# --- acceptance criteria summary -------------------------------------------
#
# test_acceptance.py holds one test per binding criterion; collect their
# outcomes and print a one-line verdict each at the end of the run.

_CRITERION_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    if report.when == "setup" and report.skipped:
        reason = ""
        if isinstance(report.longrepr, tuple):
            reason = str(report.longrepr[-1]).removeprefix("Skipped: ")
        _CRITERION_RESULTS[number] = ("SKIP", reason)
    elif report.when == "call":
        if report.passed:
            _CRITERION_RESULTS[number] = ("PASS", "")
        elif report.skipped:
            reason = ""
            if isinstance(report.longrepr, tuple):
                reason = str(report.longrepr[-1]).removeprefix("Skipped: ")
            _CRITERION_RESULTS[number] = ("SKIP", reason)
        else:
            _CRITERION_RESULTS[number] = ("FAIL", "")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERION_RESULTS):
        verdict, reason = _CRITERION_RESULTS[number]
        line = f"criterion {number:2d}: {verdict}"
        if reason:
            line += f" ({reason})"
        terminalreporter.write_line(line)
