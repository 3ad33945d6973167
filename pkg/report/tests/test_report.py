"""Acceptance-style tests for the figure renderer.

Fixtures are canned artifacts written from literal strings matching the
documented schemas (docs/formats.md of the main package); the renderer is
exercised through both the library API and the CLI.
"""

import numpy as np
import pytest

from heatlab_report.cli import main, specs_from_toml
from heatlab_report.figures import KINDS, FigureSpec, render
from heatlab_report.io import SchemaError

DIGEST = "0123456789abcdef"


def _write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def fixtures(tmp_path):
    """One canned artifact per documented schema."""
    out = {}
    out["ldp_eq"] = _write(tmp_path / "ldp_eq.csv", f"""# command=ldp-eq
# config_digest={DIGEST}
N,minus_log_p_over_N,rate_value
128,0.11559217704330113,0.094534891891835615
512,0.1010906571207367,0.094534891891835615
2048,0.096508062233564687,0.094534891891835615
""")
    out["compare"] = _write(tmp_path / "compare_weak_errors.csv", f"""# command=compare
# config_digest={DIGEST}
N,weak_error
32,0.0378
64,0.0256
128,0.0103
""")
    out["weights"] = _write(tmp_path / "girsanov_weights.csv", f"""# command=girsanov
# config_digest={DIGEST}
traj,log_weight
""" + "\n".join(f"{k},{v}" for k, v in enumerate(
        0.05 * np.sin(np.arange(200) * 0.7) - 0.01)) + "\n")

    # small 3-level, 8-point field and two tiny trajectory ensembles
    xs = np.arange(8) / 8
    times = [0.0, 0.01, 0.02]
    rows = ["# command=hydro", f"# config_digest={DIGEST}", "t,x,rho"]
    for t in times:
        for x, v in zip(xs, 1.0 + 0.5 * np.exp(-4 * np.pi ** 2 * t) * np.cos(2 * np.pi * xs)):
            rows.append(f"{t},{x},{v}")
    out["field"] = _write(tmp_path / "hydro_field.csv", "\n".join(rows) + "\n")

    for name, n in (("traj8", 8), ("traj16", 16)):
        pos = (np.arange(n) + 1.0) / n
        lines = ["# command=simulate", f"# config_digest={DIGEST}",
                 "traj,snapshot,t,i,z"]
        rng = np.random.default_rng(n)
        for p in range(3):
            for k, t in enumerate(times):
                z = 1.0 + 0.5 * np.cos(2 * np.pi * pos) + 0.01 * rng.random(n)
                for i in range(n):
                    lines.append(f"{p},{k},{t},{i},{z[i]}")
        out[name] = _write(tmp_path / f"{name}.csv", "\n".join(lines) + "\n")
    return out


EXPECTED_SERIES = {
    "profile-overlay": 3,   # two lattice sizes + the PDE curve
    "convergence": 1,
    "tail-rate": 4,         # three N points + the rate line
    "histogram": 2,         # bars + the unit-mean marker
    "kymograph": 1,
}


def spec_for(kind, fixtures, tmp_path, suffix=".png", **kw):
    inputs = {
        "profile-overlay": (fixtures["traj8"], fixtures["traj16"], fixtures["field"]),
        "convergence": (fixtures["compare"],),
        "tail-rate": (fixtures["ldp_eq"],),
        "histogram": (fixtures["weights"],),
        "kymograph": (fixtures["field"],),
    }[kind]
    return FigureSpec(kind=kind, inputs=inputs,
                      output=str(tmp_path / f"{kind}{suffix}"), **kw)


class TestRenderAllKinds:
    @pytest.mark.parametrize("kind", KINDS)
    def test_renders_with_expected_series_count(self, kind, fixtures, tmp_path):
        res = render(spec_for(kind, fixtures, tmp_path))
        assert res.n_series == EXPECTED_SERIES[kind]
        data = (tmp_path / f"{kind}.png").read_bytes()
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        assert len(data) > 1000

    @pytest.mark.parametrize("kind", KINDS)
    def test_rerender_is_deterministic(self, kind, fixtures, tmp_path):
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        render(FigureSpec(kind=kind, inputs=spec_for(kind, fixtures, tmp_path).inputs,
                          output=str(a)))
        render(FigureSpec(kind=kind, inputs=spec_for(kind, fixtures, tmp_path).inputs,
                          output=str(b)))
        assert a.read_bytes() == b.read_bytes()

    def test_svg_output_deterministic(self, fixtures, tmp_path):
        a = render(spec_for("tail-rate", fixtures, tmp_path, suffix=".svg"))
        first = (tmp_path / "tail-rate.svg").read_bytes()
        render(spec_for("tail-rate", fixtures, tmp_path, suffix=".svg"))
        assert (tmp_path / "tail-rate.svg").read_bytes() == first
        assert a.n_series == EXPECTED_SERIES["tail-rate"]


class TestValidation:
    def test_unknown_kind(self):
        with pytest.raises(SchemaError):
            FigureSpec(kind="pie", inputs=("x.csv",), output="x.png")

    def test_schema_mismatch_fails_fast(self, fixtures, tmp_path):
        spec = FigureSpec(kind="tail-rate", inputs=(fixtures["compare"],),
                          output=str(tmp_path / "x.png"))
        with pytest.raises(SchemaError):
            render(spec)

    def test_digest_check(self, fixtures, tmp_path):
        ok = FigureSpec(kind="convergence", inputs=(fixtures["compare"],),
                        output=str(tmp_path / "x.png"), expect_digest=DIGEST)
        render(ok)
        bad = FigureSpec(kind="convergence", inputs=(fixtures["compare"],),
                         output=str(tmp_path / "y.png"), expect_digest="feedfacefeedface")
        with pytest.raises(SchemaError):
            render(bad)

    def test_missing_input(self, tmp_path):
        spec = FigureSpec(kind="kymograph", inputs=(str(tmp_path / "nope.csv"),),
                          output=str(tmp_path / "x.png"))
        with pytest.raises(SchemaError):
            render(spec)


class TestCli:
    def test_single_figure_flags(self, fixtures, tmp_path, capsys):
        out = tmp_path / "fig.png"
        code = main(["--kind", "tail-rate", "--input", fixtures["ldp_eq"],
                     "--output", str(out)])
        assert code == 0
        assert out.exists()
        assert "4 series" in capsys.readouterr().out

    def test_spec_file_batch(self, fixtures, tmp_path, capsys):
        spec = tmp_path / "figs.toml"
        spec.write_text(f"""
[[figure]]
kind = "convergence"
inputs = ["{fixtures['compare']}"]
output = "{tmp_path / 'conv.png'}"
title = "weak errors"

[[figure]]
kind = "kymograph"
inputs = ["{fixtures['field']}"]
output = "{tmp_path / 'kymo.png'}"
""")
        assert len(specs_from_toml(str(spec))) == 2
        assert main(["--spec", str(spec)]) == 0
        assert (tmp_path / "conv.png").exists()
        assert (tmp_path / "kymo.png").exists()

    def test_schema_error_exit_code(self, fixtures, tmp_path, capsys):
        code = main(["--kind", "histogram", "--input", fixtures["compare"],
                     "--output", str(tmp_path / "x.png")])
        assert code == 1
        assert "error" in capsys.readouterr().err
