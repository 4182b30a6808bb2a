import numpy as np
import pytest

from sdkrylov import io
from sdkrylov.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, main
from sdkrylov.config import ConfigError, parse_config
from sdkrylov.problems import load_problem

SMALL_CASE1 = "case = case1\nside = 12\nseed = 4\nfootprint_width = 0.1\nmax_iter = 8\n"
SMALL_CUSTOM = "case = custom\nn = 24\nm = 18\nseed = 2\nmax_iter = 6\n"


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(tmp_path, command, text, out="out", problem=None):
    argv = [command, "--config", write_cfg(tmp_path, text), "--out", str(tmp_path / out)]
    if problem:
        argv += ["--problem", str(problem)]
    return main(argv)


def test_gen_writes_problem_and_descriptor(tmp_path):
    assert run(tmp_path, "gen", SMALL_CASE1) == EXIT_OK
    out = tmp_path / "out"
    assert (out / "problem.sdkp").exists()
    assert "seed = 4" in (out / "descriptor.txt").read_text()
    tp = load_problem(out / "problem.sdkp")
    assert tp.problem.A.shape == (43, 144)


def test_gen_is_byte_reproducible(tmp_path):
    run(tmp_path, "gen", SMALL_CASE1, out="a")
    run(tmp_path, "gen", SMALL_CASE1, out="b")
    assert (tmp_path / "a/problem.sdkp").read_bytes() == (tmp_path / "b/problem.sdkp").read_bytes()


def test_unknown_key_exit_code(tmp_path, capsys):
    assert run(tmp_path, "gen", SMALL_CASE1 + "foo = 1\n") == EXIT_CONFIG
    assert "foo" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["method = magic", "max_iter = 0", "nlevel = -1", "side = abc", "tau = 0.5",
                                  "amp_lo = 1", "no equals sign"])
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_comments_and_booleans():
    cfg = parse_config("# header\nreorthogonalize = no  # trailing\ncompare_alternating = true\n")
    assert cfg.reorthogonalize is False and cfg.compare_alternating is True


def test_missing_files_are_io_errors(tmp_path):
    assert main(["gen", "--config", str(tmp_path / "nope.cfg")]) == EXIT_IO
    assert run(tmp_path, "solve", SMALL_CUSTOM, problem=tmp_path / "missing.sdkp") == EXIT_IO


def test_corrupt_problem_file(tmp_path):
    bad = tmp_path / "bad.sdkp"
    bad.write_bytes(b"NOPE")
    assert run(tmp_path, "solve", SMALL_CUSTOM, problem=bad) == EXIT_IO


def test_mm_without_parameters_is_config_error(tmp_path):
    assert run(tmp_path, "solve", SMALL_CUSTOM + "method = mm\n") == EXIT_CONFIG


def test_noiseless_trivial_problem_has_empty_history(tmp_path):
    text = "case = custom\nn = 16\nm = 12\nnlevel = 0\nn_spikes = 0\nsmooth_amp = 0\nformats = csv\n"
    assert run(tmp_path, "solve", text) == EXIT_OK
    header, rows = io.read_csv(tmp_path / "out/history.csv")
    assert header == list(io.HISTORY_FIELDS) and rows == []


def test_solve_outputs_and_pgm_round_trip(tmp_path):
    assert run(tmp_path, "solve", SMALL_CASE1) == EXIT_OK
    out = tmp_path / "out"
    header, rows = io.read_csv(out / "history.csv")
    assert 1 <= len(rows) <= 8 and header[0] == "iter"
    raw = (out / "history.csv").read_bytes()
    assert raw.startswith(b"# schema=1\r\n") and b"\r\n" in raw[12:]
    img = io.read_pgm(out / "s.pgm")
    assert img.shape == (12, 12)


def test_pgm_round_trip_within_quantization(tmp_path, rng):
    img = rng.standard_normal((7, 9)) * 3
    lo, hi = io.write_pgm(tmp_path / "x.pgm", img)
    back = io.read_pgm(tmp_path / "x.pgm")
    assert np.max(np.abs(back - img)) <= 0.5 * (hi - lo) / 65535 + 1e-12


@pytest.mark.xfail(strict=True, reason="after the early drop the error wobbles by about 2e-5 around its plateau; "
                                       "the regularized solutions at step k do not contain those of step k-1")
def test_case1_optimal_error_trace(tmp_path):
    text = "case = case1\nseed = 0\nrule = optimal\nformats = csv\n"
    assert run(tmp_path, "solve", text) == EXIT_OK
    _, rows = io.read_csv(tmp_path / "out/history.csv")
    gcv = np.array([float(r[3]) for r in rows])
    err = np.array([float(r[5]) for r in rows])
    stop = int(np.argmin(gcv)) + 1
    assert np.all(np.diff(err[:stop]) <= 1e-12)


def test_compare_is_deterministic_and_reports_parameters(tmp_path):
    text = SMALL_CUSTOM + "rule = dp\nformats = csv\n"
    assert run(tmp_path, "compare", text, out="a") == EXIT_OK
    assert run(tmp_path, "compare", text, out="b") == EXIT_OK
    for name in ("compare.csv", "compare_summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header, rows = io.read_csv(tmp_path / "a/compare_summary.csv")
    assert [r[0] for r in rows] == ["sdhybr", "genhybr", "fhybr"]
    li, ai = header.index("lambda"), header.index("alpha")
    assert all(r[li] != "" and r[ai] != "" for r in rows)


def _sweep(tmp_path, points, out):
    text = SMALL_CUSTOM + f"sweep_points = {points}\nmax_iter = 4\n"
    assert run(tmp_path, "sweep", text, out=out) == EXIT_OK
    _, rows = io.read_csv(tmp_path / out / "sweep.csv")
    return rows


def test_sweep_row_count_and_iterations(tmp_path):
    rows = _sweep(tmp_path, 3, "s3")
    assert len(rows) == 9
    assert all(int(r[2]) == 4 for r in rows)


def test_sweep_minimum_beats_selected_point(tmp_path):
    rows = _sweep(tmp_path, 9, "s9")
    errs = {(float(r[0]), float(r[1])): float(r[3]) for r in rows}
    lam, alpha = next(iter(errs))
    text = SMALL_CUSTOM + f"rule = fixed\nfixed_lambda = {lam!r}\nfixed_alpha = {alpha!r}\nmax_iter = 4\nformats = csv\n"
    text += "gcv_tol = 1e-300\nwindow = 100\n"
    assert run(tmp_path, "solve", text, out="sel") == EXIT_OK
    _, hist = io.read_csv(tmp_path / "sel/history.csv")
    assert min(errs.values()) <= float(hist[-1][5])


def test_sweep_refinement_does_not_increase_minimum(tmp_path):
    coarse = min(float(r[3]) for r in _sweep(tmp_path, 9, "c"))
    fine = min(float(r[3]) for r in _sweep(tmp_path, 17, "f"))
    assert fine <= coarse
