import numpy as np
import pytest

from fseend.model import FSEEND, ModelConfig


def tiny_config(**kw) -> ModelConfig:
    base = dict(
        input_dim=5,
        d_model=8,
        n_heads=2,
        n_enc_blocks=1,
        n_dec_blocks=1,
        s_max=2,
        kernel_size=3,
        left_pad=1,
        right_pad=1,
    )
    base.update(kw)
    return ModelConfig(**base)


def random_model(seed: int, **kw) -> FSEEND:
    """Model with randomized (non-zero) biases and norm affines so every parameter matters."""
    model = FSEEND.init(tiny_config(**kw), seed)
    rng = np.random.default_rng(10_000 + seed)
    for name, value in model.params.items():
        if name.endswith((".b", ".bq", ".bv", ".bo", ".b1", ".b2")) or name.endswith(".in.b") or name == "la.b":
            model.params[name] = value + 0.1 * rng.normal(size=value.shape)
        elif name.endswith(".g"):
            model.params[name] = value + 0.1 * rng.normal(size=value.shape)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if report.when == "call" and "criterion" in props:
        verdict = "PASS" if report.passed else "FAIL"
        _criteria.append(f"{verdict}  {props['criterion']}: {props.get('detail', '')}")


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)
