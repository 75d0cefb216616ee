from slsgrid import harness
from slsgrid.cli import build_parser, main
from slsgrid.plant import dump_plant, generate_plant
from slsgrid.sls import load_response, validate_achievability

TINY = ["--rows", "2", "--cols", "2", "--horizon", "6", "--t-mpc", "3", "--num-periods", "2"]


def test_every_config_field_has_a_flag():
    parser = build_parser()
    args = parser.parse_args(["simulate"] + TINY)
    for name, *_ in harness.config_fields():
        assert hasattr(args, name)
    assert args.rows == 2 and args.dt is None


def test_synth_from_plant_dump(tmp_path, capsys):
    plant = generate_plant(2, 3, seed=4)
    (tmp_path / "plant.txt").write_text(dump_plant(plant))
    assert main(["synth", "--plant", str(tmp_path / "plant.txt"), "--horizon", "8", "--d", "1"]) == 0
    resp = load_response(capsys.readouterr().out)
    assert resp.horizon == 8
    assert validate_achievability(plant, resp) <= 1e-8


def test_simulate_and_report(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUT_ENV, str(tmp_path / "sim"))
    assert main(["simulate", "--no-plots"] + TINY) == 0
    assert (tmp_path / "sim" / "traj_0.csv").exists()
    assert main(["report", str(tmp_path / "sim"), "--out", str(tmp_path / "again"),
                 "--no-plots"]) == 0
    a = (tmp_path / "sim" / "costs.csv").read_bytes()
    assert (tmp_path / "again" / "costs.csv").read_bytes() == a


def test_benchmark_with_config_file(tmp_path, capsys):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("rows = 2\ncols = 2\nhorizon = 6\nt_mpc = 3\nnum_periods = 2\n")
    assert main(["benchmark", "--config", str(cfg), "--trials", "2", "--no-plots",
                 "--out", str(tmp_path / "bench")]) == 0
    out = capsys.readouterr().out
    assert "LocLayered" in out and "trials 2" in out
    rows = (tmp_path / "bench" / "costs.csv").read_text().splitlines()
    assert len(rows) == 3


def test_errors_give_nonzero_exit(tmp_path, capsys):
    assert main(["simulate", "--t-mpc", "30"]) == 2
    assert "t_mpc" in capsys.readouterr().err
    assert main(["report", str(tmp_path)]) == 1


def test_failed_trial_sets_exit_code(tmp_path, monkeypatch):
    real = harness.run_trial

    def broken(config, seed, trial=0):
        r = real(config, seed, trial)
        r.errors["CenMPC"] = "forced"
        return r
    monkeypatch.setattr(harness, "run_trial", broken)
    assert main(["benchmark", "--trials", "1", "--no-plots", "--out", str(tmp_path)] + TINY) == 1
    # the failed trial is listed but kept out of the table
    assert "forced" in (tmp_path / "costs.csv").read_text()
    assert len((tmp_path / "summary.csv").read_text().splitlines()) == 1
