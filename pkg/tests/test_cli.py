import numpy as np
import pytest

from fsblstm import checks, wavio
from fsblstm import weights as W
from fsblstm.cli import main


def kv(text):
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line and " " not in line)


@pytest.fixture
def tiny_weights(tmp_path):
    path = tmp_path / "tiny.fsbw"
    W.save(W.init_random(checks.tiny_config(num_mics=2), seed=0), path)
    return path


def write_input(path, channels, rate=16000, n=3000, tag=wavio.PCM, seed=0):
    x = 0.3 * np.random.default_rng(seed).standard_normal((channels, n))
    wavio.write(path, wavio.from_float(np.clip(x, -1, 1), rate, tag))


def test_enhance_shape_and_stats(tmp_path, tiny_weights, capsys):
    write_input(tmp_path / "in.wav", 2)
    assert main(["enhance", "--weights", str(tiny_weights), "--in", str(tmp_path / "in.wav"),
                 "--out", str(tmp_path / "out.wav")]) == 0
    out = wavio.read(tmp_path / "out.wav")
    assert out.channels == 1 and out.sample_rate == 16000 and out.data.shape[0] == 3000
    assert out.format_tag == wavio.PCM
    stats = kv(capsys.readouterr().out)
    assert float(stats["rtf"]) > 0 and float(stats["frame_ms_p95"]) >= float(stats["frame_ms_p50"])


def test_enhance_float_input_gives_float_output(tmp_path, tiny_weights):
    write_input(tmp_path / "in.wav", 2, tag=wavio.IEEE_FLOAT)
    main(["enhance", "--weights", str(tiny_weights), "--in", str(tmp_path / "in.wav"),
          "--out", str(tmp_path / "out.wav")])
    assert wavio.read(tmp_path / "out.wav").format_tag == wavio.IEEE_FLOAT


@pytest.mark.parametrize("chunk_ms", ["5", "37.5", "250"])
def test_enhance_is_chunk_invariant(tmp_path, tiny_weights, chunk_ms):
    write_input(tmp_path / "in.wav", 2)
    args = ["enhance", "--weights", str(tiny_weights), "--in", str(tmp_path / "in.wav")]
    main(args + ["--out", str(tmp_path / "a.wav")])
    main(args + ["--out", str(tmp_path / "b.wav"), "--chunk-ms", chunk_ms])
    assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()


def test_enhance_rejects_rate_and_channel_mismatch(tmp_path, tiny_weights, capsys):
    write_input(tmp_path / "8k.wav", 2, rate=8000)
    write_input(tmp_path / "3ch.wav", 3)
    base = ["enhance", "--weights", str(tiny_weights), "--out", str(tmp_path / "o.wav")]
    assert main(base + ["--in", str(tmp_path / "8k.wav")]) == 2
    assert "sample rate" in capsys.readouterr().err
    assert main(base + ["--in", str(tmp_path / "3ch.wav")]) == 2
    assert "channel" in capsys.readouterr().err


def test_enhance_rejects_bad_weights(tmp_path, capsys):
    write_input(tmp_path / "in.wav", 2)
    (tmp_path / "bad.fsbw").write_bytes(b"garbage")
    for weights in (tmp_path / "bad.fsbw", tmp_path / "missing.fsbw"):
        assert main(["enhance", "--weights", str(weights), "--in", str(tmp_path / "in.wav"),
                     "--out", str(tmp_path / "o.wav")]) == 2


@pytest.mark.parametrize("args,key,published", [
    (["--preset", "fsb-6ch"], "gmacs_per_second", 3.37),
    (["--preset", "fb6-6ch", "--hop-ms", "1"], "gmacs_per_second", 4.65),
    (["--preset", "fsb-1ch"], "gmacs_per_second", 3.30),
    (["--preset", "fsb-6ch"], "params_m", 1.96),
])
def test_analyze_presets(capsys, args, key, published):
    assert main(["analyze"] + args) == 0
    out = capsys.readouterr().out
    assert abs(float(kv(out)[key]) / published - 1) <= 0.05
    assert "layer" in out and "MACs/frame" in out


def test_analyze_json_config(tmp_path, capsys):
    cfg = checks.tiny_config()
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert main(["analyze", "--config", str(tmp_path / "c.json")]) == 0
    from fsblstm.complexity import count_params
    assert int(kv(capsys.readouterr().out)["params"]) == count_params(cfg)[0]


def test_analyze_invalid_config(capsys):
    assert main(["analyze", "--config", '{"embed_dim": 0}']) == 2
    assert main(["analyze", "--config", '{"nope": 1}']) == 2
    assert main(["analyze", "--config", "{not json"]) == 2


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["analyze"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_init_weights_deterministic_and_consistent_with_analyze(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["init-weights", "--preset", "fsb-6ch", "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    capsys.readouterr()
    main(["analyze", "--preset", "fsb-6ch"])
    assert int(kv(capsys.readouterr().out)["params"]) == W.load(tmp_path / "a").num_params


def test_selfcheck_passes(capsys):
    assert main(["selfcheck", "--suite", "all"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "selfcheck ok" in out


def test_selfcheck_failure_exits_three(monkeypatch, capsys):
    monkeypatch.setitem(checks.SUITES, "stft", lambda: [checks.Result("forced invariant", 1.0, 0.0)])
    assert main(["selfcheck", "--suite", "stft"]) == 3
    assert "forced invariant" in capsys.readouterr().err


def test_train_toy_writes_trace(tmp_path, capsys):
    assert main(["train-toy", "--steps", "3", "--seed", "0", "--out", str(tmp_path / "t.csv"),
                 "--weights-out", str(tmp_path / "w.fsbw")]) == 0
    trace = [float(v) for v in (tmp_path / "t.csv").read_text().strip().split(",")]
    assert len(trace) == 4 and all(np.isfinite(trace))
    assert W.load(tmp_path / "w.fsbw").num_params > 0
    assert float(kv(capsys.readouterr().out)["initial_loss"]) == pytest.approx(trace[0], rel=1e-6)
