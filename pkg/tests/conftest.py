import json
from collections import defaultdict

import numpy as np
import pytest

from respiro.audio import Waveform, write_wav

LABELS = ("normal", "crackle", "wheeze", "both")
FREQS = {"normal": 300.0, "crackle": 700.0, "wheeze": 1500.0, "both": 2600.0}

TINY_CONFIG = {
    "dsp": {"vocoder_seconds": 0.5, "classifier_seconds": 1.0},
    "vocoder": {
        "residual_layers": 4,
        "residual_channels": 8,
        "dilation_cycle_length": 2,
        "step_hidden_dim": 32,
        "batch_size": 4,
        "crop_frames": 2,
        "log_every": 5,
    },
    "classifier": {"n_frames": 101, "embed_dim": 16, "heads": 2, "depth": 1, "epochs": 3, "lr": 0.001,
                   "batch_size": 8},
    "seeds": [0, 1],
}


def tone_clip(label, k, rate=8000, seconds=0.6):
    rng = np.random.default_rng([LABELS.index(label), k])
    t = np.arange(int(rate * seconds)) / rate
    x = 0.4 * np.sin(2 * np.pi * FREQS[label] * (1 + 0.02 * k) * t) + 0.01 * rng.standard_normal(t.size)
    return Waveform(x.astype(np.float32), rate)


def write_corpus(root, per_class=3, test_per_class=2, mirror_test=False):
    """Tone clips per class plus a JSONL manifest; returns the manifest path.

    With ``mirror_test`` the test split reuses the training audio under new ids.
    """
    (root / "audio").mkdir(parents=True, exist_ok=True)
    rows = []
    for label in LABELS:
        for k in range(per_class):
            rid = f"train-{label}-{k}"
            write_wav(root / "audio" / f"{rid}.wav", tone_clip(label, k))
            rows.append({"id": rid, "path": f"audio/{rid}.wav", "label": label, "split": "train", "source": "real"})
        for k in range(test_per_class):
            rid = f"test-{label}-{k}"
            if mirror_test:
                path = f"audio/train-{label}-{k}.wav"
            else:
                write_wav(root / "audio" / f"{rid}.wav", tone_clip(label, 100 + k))
                path = f"audio/{rid}.wav"
            rows.append({"id": rid, "path": path, "label": label, "split": "test", "source": "real"})
    manifest = root / "real.jsonl"
    manifest.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return manifest


def write_config(root, **overrides):
    cfg = json.loads(json.dumps(TINY_CONFIG))
    for section, values in overrides.items():
        if isinstance(values, dict):
            cfg.setdefault(section, {}).update(values)
        else:
            cfg[section] = values
    path = root / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def corpus(tmp_path):
    return write_corpus(tmp_path), write_config(tmp_path)


# acceptance reporting: one PASS/FAIL line per numbered criterion

_CRITERIA = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    failed_setup = report.when == "setup" and not report.passed
    if report.when == "call" or failed_setup:
        details = [v for k, v in item.user_properties if k == "detail"]
        _CRITERIA[marker.args[0]].append((item.name, report.passed, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        status = "PASS" if all(ok for _, ok, _ in results) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}")
        for name, ok, details in results:
            terminalreporter.write_line(f"    {'ok  ' if ok else 'FAIL'} {name}" +
                                        (f": {'; '.join(details)}" if details else ""))


@pytest.fixture(scope="session")
def aft_toy_runs():
    """Two-domain toy runs for lambda scales 0, 0.5 and 1 over seeds 0-2.

    Each entry holds held-out domain accuracy (a fresh probe at lambda 0, the
    co-trained head otherwise), a fresh probe on the trained embedding, and
    held-out label accuracy.
    """
    from toy_domains import TOY_CONFIG, two_domain_split

    from respiro.classifier import (AftClassifier, TrainConfig, discriminator_accuracy,
                                    domain_probe_accuracy, fit, predict)

    runs = {}
    for seed in range(3):
        train, test = two_domain_split(seed)
        for scale in (0.0, 0.5, 1.0):
            model = AftClassifier(TOY_CONFIG, seed=seed)
            cfg = TrainConfig(epochs=40, batch_size=32, lr=3e-4, gamma=10.0, aft=scale > 0,
                              lambda_scale=scale if scale > 0 else 1.0)
            fit(model, train, cfg, seed)
            probe = domain_probe_accuracy(model, train, test, seed=seed)
            runs[scale, seed] = {
                "domain": probe if scale == 0 else discriminator_accuracy(model, test),
                "probe": probe,
                "label": 100.0 * float((predict(model, test.features).argmax(1) == test.labels).mean()),
            }
    return runs
