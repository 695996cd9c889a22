import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from dhw import harness, solver
from dhw.errors import InvariantViolation, ValidationError

from conftest import Z_STAR

# printed magnitudes of the excitation-error table, rows n2 = -2..2, columns n1 = -2..3
PRINTED_S = [
    [14.07, 14.24, 14.33, 14.33, 14.24, 14.07],
    [6.87, 7.04, 7.12, 7.12, 7.04, 6.87],
    [0.25, 0.08, 0.0, 0.0, 0.08, 0.25],
    [7.28, 7.12, 7.04, 7.04, 7.12, 7.28],
    [14.24, 14.09, 14.00, 14.00, 14.08, 14.24],
]

# printed endpoint amplitudes (visible decimals) for modes (0,0) and (1,0)
PRINTED_AMPLITUDES = {
    "G1": (-0.16153606468 - 0.07740830300j, 0.42515771142 - 0.88721717658j),
    "G2": (-0.16446909478 - 0.06766454587j, 0.37790257701 - 0.90775029000j),
    "G3": (-0.16445260546 - 0.06764875833j, 0.37789496977 - 0.90775362575j),
    "G4": (-0.16444252690 - 0.06764808597j, 0.37791410830 - 0.90774683865j),
    "G": (-0.16444251537 - 0.06764807576j, 0.37791412093 - 0.90774682391j),
}
PRINTED_DIGITS = {"G1": 1, "G2": 4, "G3": 4, "G4": 7}

U_HAT = 0.7 + 0.2j
RHO0 = 100.0


def base_dict():
    return json.loads(harness.shipped_config_path().read_text())


def two_beam_dict(periods=3.0, samples=256):
    return {
        "name": "two_beam",
        "frame": {"a0_nm": 1.0, "dimension": 2},
        "k0": {"components_nm_inv": [-0.5, RHO0]},
        "thickness_nm": periods * RHO0 / abs(U_HAT),
        "z_samples": samples,
        "potential": {"coefficients": [{"index": [1, 0], "re": U_HAT.real, "im": U_HAT.imag}]},
        "envelope": {"C_U_nm2": 1.0, "alpha_U_nm": 0.3},
        "beam_sets": {"pair": {"rule": "systematic_row", "g_star": [1, 0], "n_min": 0, "n_max": 1},
                      "free": {"rule": "indices", "indices": [[0, 0]]}},
        "reference": "pair",
        "tolerances": {"oracle": 1e-10},
    }


def free_beam_dict():
    d = two_beam_dict()
    d["potential"]["coefficients"].append({"index": [0, 0], "re": 4.0, "im": 0.0})
    d["envelope"]["C_U_nm2"] = 4.0
    d["beam_sets"] = {"free": {"rule": "indices", "indices": [[0, 0]]}}
    d["reference"] = "free"
    return d


def test_shipped_config_loads(gaas_config):
    assert gaas_config.name == "gaas_30beam"
    assert gaas_config.k0.rho0 == 608.293
    assert gaas_config.thickness_nm == Z_STAR
    assert gaas_config.z_grid.size == 513
    assert gaas_config.envelope.C_U == pytest.approx(10.0)
    assert len(gaas_config.sha256) == 64


def test_shipped_sets_have_expected_sizes(gaas_sets):
    assert {n: len(s) for n, s in gaas_sets.items()} == {
        "G1": 2, "G2": 4, "G3": 6, "G4": 18, "G": 30}


def test_reference_defaults_to_largest_set(gaas_sets):
    d = base_dict()
    d.pop("reference")
    cfg = harness.config_from_dict(d)
    assert harness.reference_name(cfg, gaas_sets) == "G"


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("frame"),
    lambda d: d.pop("thickness_nm"),
    lambda d: d.__setitem__("thickness_nm", -1),
    lambda d: d.__setitem__("thickness_nm", "thick"),
    lambda d: d.__setitem__("z_samples", 0),
    lambda d: d.__setitem__("reference", "nope"),
    lambda d: d.__setitem__("beam_sets", {}),
    lambda d: d["k0"].pop("normal_nm_inv"),
    lambda d: d["k0"].__setitem__("inplane_per_a0", [1.0, 2.0]),
    lambda d: d.__setitem__("envelope", {"C_U_nm2": 1.0, "alpha_U_nm": 0.1}),
    lambda d: d.__setitem__("potential", {}),
])
def test_invalid_configs_are_rejected(mutate):
    d = base_dict()
    mutate(d)
    with pytest.raises(ValidationError):
        harness.config_from_dict(d)


@pytest.mark.parametrize("spec", [
    {"rule": "pentagon"},
    {"rule": "box", "ranges": [[0, 1]]},
    {"rule": "ball"},
    {"rule": "systematic_row", "g_star": [1, 0]},
])
def test_malformed_beam_sets_are_rejected(spec):
    d = base_dict()
    d["beam_sets"]["bad"] = spec
    with pytest.raises(ValidationError):
        harness.build_beam_sets(harness.config_from_dict(d))


def test_every_rule_builds(gaas_config):
    d = base_dict()
    d["beam_sets"] = {
        "ball": {"rule": "ball", "M_nm_inv": 15.6},
        "gt": {"rule": "gamma_truncated", "gamma": 0.5, "R_cap_nm_inv": 20.0},
        "ew": {"rule": "ewald", "M_nm_inv": 25.0, "s_star_nm_inv": 1.0},
        "row": {"rule": "systematic_row", "g_star": [1, 0], "n_min": -1, "n_max": 2},
        "th": {"rule": "threshold", "u_min_nm2": 1.0, "s_max_nm_inv": 0.3},
        "idx": {"rule": "indices", "indices": [[0, 0], [1, 0]]},
    }
    d.pop("reference")
    sets = harness.build_beam_sets(harness.config_from_dict(d))
    assert len(sets["ball"]) == 13 and len(sets["row"]) == 4 and len(sets["idx"]) == 2
    assert set(sets["th"].indices) == {(n, 0) for n in range(-2, 4)}


def test_load_config_errors(tmp_path):
    with pytest.raises(ValidationError):
        harness.load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValidationError):
        harness.load_config(bad)


def test_potential_file_reference(tmp_path):
    d = base_dict()
    (tmp_path / "pot.json").write_text(json.dumps(d["potential"]))
    d["potential"] = {"file": "pot.json"}
    (tmp_path / "cfg.json").write_text(json.dumps(d))
    cfg = harness.load_config(tmp_path / "cfg.json")
    assert cfg.potential[(1, 1)] == 2.0


def test_voltage_config():
    d = base_dict()
    d["k0"] = {"inplane_per_a0": [-2.0], "voltage_kV": 400}
    cfg = harness.config_from_dict(d)
    assert cfg.k0.magnitude == pytest.approx(608.293, abs=2e-3)


def test_significant_digits_identical_values():
    assert harness.significant_digits(0.3 - 0.2j, 0.3 - 0.2j) >= 11


def test_significant_digits_reproduces_printed_ladder():
    ref = PRINTED_AMPLITUDES["G"]
    for name, want in PRINTED_DIGITS.items():
        got = [harness.significant_digits(a, b) for a, b in zip(PRINTED_AMPLITUDES[name], ref)]
        assert got == [want, want]


def test_significant_digits_rounding_rule():
    assert harness.significant_digits(0.1235, 0.1234) == 3
    assert harness.significant_digits(0.12351, 0.1234) == 3
    assert harness.significant_digits(0.1240, 0.1234) == 2
    assert harness.significant_digits(0.1 + 0.9j, 0.1 + 0.1j) == 0
    with pytest.raises(ValidationError):
        harness.significant_digits(1.0, 0.0)


@settings(max_examples=200)
@given(st.floats(0.1, 0.999), st.floats(0.1, 0.999), st.integers(1, 12), st.booleans())
def test_significant_digits_perturbation_caps_count(re, im, k, real_part):
    b = complex(re, im)
    delta = 10.0 ** (-k) * abs(re if real_part else im)
    a = b + (delta if real_part else 1j * delta)
    assert harness.significant_digits(a, b) <= k + 1


def test_excitation_table_matches_printed_magnitudes(gaas_config, gaas_sets):
    rows, cols, grid = harness.excitation_grid(gaas_config, gaas_sets["G"])
    assert rows == [-2, -1, 0, 1, 2] and cols == [-2, -1, 0, 1, 2, 3]
    # the two-decimal display agrees with the printed table to within one last-digit unit
    shown = np.round(np.abs(grid), 2)
    assert np.max(np.abs(shown - np.array(PRINTED_S))) <= 0.01 + 1e-9
    assert grid[rows.index(0), cols.index(0)] == 0.0
    assert abs(grid[rows.index(0), cols.index(1)]) < 1e-12


def test_excitation_table_text(gaas_config):
    text = harness.excitation_table(gaas_config)
    assert "14.07" in text and "sign convention" in text
    assert len(text.splitlines()) == 7


def test_reference_run_passes(gaas_report):
    assert gaas_report.status == "PASSED", gaas_report.failures
    assert gaas_report.oracle_deviation < 1e-8
    assert all(c.ok for c in gaas_report.dominance)
    assert gaas_report.set_sizes["G"] == 30


def test_reference_run_scalars(gaas_report):
    s = gaas_report.scalars
    assert s["scattering_length_nm"] == pytest.approx(60.83, abs=0.01)
    assert s["scattering_length_nm"] == pytest.approx(s["k0_norm_nm_inv"] / 10, rel=1e-9)
    assert s["inv_ak0_squared"] == pytest.approx(8.4647989e-6, abs=1e-12)
    assert s["kappa_nm_inv"] == pytest.approx(2.0454, abs=1e-4)


def test_report_text_and_json(gaas_report):
    text = gaas_report.text()
    assert "status=PASSED" in text and "dominance checks" in text
    d = json.loads(json.dumps(gaas_report.as_dict(), default=str))
    assert d["status"] == "PASSED" and d["reference"] == "G"
    assert d["digits"]["G1"]["min"] == 1


def test_comparison_table_has_eleven_decimals(gaas_report):
    table = harness.comparison_table(gaas_report)
    assert "-0.16444422079 + 0.06764253930i" in table


def test_outputs_are_deterministic(tmp_path):
    d = two_beam_dict(samples=64)
    cfg = harness.config_from_dict(d)
    harness.run(cfg, tmp_path / "a")
    harness.run(cfg, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.suffix == ".csv")
    assert names == sorted(["solution_pair.csv", "solution_free.csv", "amplitudes_pair.csv",
                            "amplitudes_free.csv", "snapshot_pair.csv", "snapshot_free.csv"])
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert not [p for p in (tmp_path / "a").iterdir() if p.name.endswith(".tmp")]
    assert (tmp_path / "a" / "excitation_table.txt").exists()


def test_free_beam_run_has_unit_modulus():
    cfg = harness.config_from_dict(free_beam_dict())
    sets = harness.build_beam_sets(cfg)
    sol = solver.evolve(solver.assemble(sets["free"], cfg.potential), cfg.z_grid)
    assert np.max(np.abs(np.abs(sol.psi[:, 0]) - 1)) <= 1e-13
    report = harness.run(cfg)
    assert report.status == "PASSED"


def test_two_beam_run_recovers_beating_period():
    cfg = harness.config_from_dict(two_beam_dict())
    report = harness.run(cfg)
    assert report.status == "PASSED", report.failures
    sys = solver.assemble(harness.build_beam_sets(cfg)["pair"], cfg.potential)
    z = cfg.z_grid
    I0 = np.abs(solver.evolve(sys, z).psi[:, 0]) ** 2
    coarse = [k for k in range(1, z.size - 1) if I0[k] <= I0[k - 1] and I0[k] <= I0[k + 1]]

    def intensity(zz):
        return abs(solver.evolve(sys, [0.0, zz]).psi[1, 0]) ** 2

    zeros = [minimize_scalar(intensity, bounds=(z[k - 1], z[k + 1]), method="bounded",
                             options={"xatol": 1e-10}).x for k in coarse]
    assert len(zeros) == 3
    period = solver.beating_period(U_HAT, RHO0)
    assert zeros[0] == pytest.approx(period / 2, rel=1e-6)
    assert np.diff(zeros) == pytest.approx([period, period], rel=1e-6)


def test_two_beam_plot_data_sums_to_one():
    cfg = harness.config_from_dict(two_beam_dict(samples=100))
    sys = solver.assemble(harness.build_beam_sets(cfg)["pair"], cfg.potential)
    sol = solver.evolve(sys, cfg.z_grid)
    long, _ = harness.amplitude_plot_data(sol)
    rows = [line.split(",") for line in long.splitlines()[1:]]
    by_z = {}
    for z, _, _, a in rows:
        by_z[z] = by_z.get(z, 0.0) + float(a) ** 2
    assert max(abs(v - 1) for v in by_z.values()) <= 1e-12


def test_snapshot_shows_four_dominant_modes(gaas_solutions):
    _, snap = harness.amplitude_plot_data(gaas_solutions["G"])
    rows = [line.split(",") for line in snap.splitlines()[1:]]
    ranked = sorted(rows, key=lambda r: -float(r[2]))
    top = {(int(r[0]), int(r[1])) for r in ranked[:4]}
    assert top == {(-1, 0), (0, 0), (1, 0), (2, 0)}
    assert float(ranked[3][2]) > 3 * float(ranked[4][2])


def test_initial_snapshot_is_single_bubble(gaas_systems):
    sol = solver.evolve(gaas_systems["G"], [0.0])
    _, snap = harness.amplitude_plot_data(sol)
    values = [float(line.split(",")[2]) for line in snap.splitlines()[1:]]
    assert values[0] == 1.0 and sum(values[1:]) == 0.0


def test_tight_tolerance_marks_run_failed(gaas_config):
    import dataclasses

    cfg = dataclasses.replace(gaas_config, flux_tol=1e-300, oracle_tol=None)
    report = harness.run(cfg, dominance=False)
    assert report.status == "FAILED"
    assert any("flux drift" in f for f in report.failures)


def test_random_suite_is_clean_and_seeded():
    checks, drifts = harness.random_suite(3, count=3)
    assert checks and all(c.ok for c in checks)
    again, _ = harness.random_suite(3, count=3)
    assert [c.max_measured for c in checks] == [c.max_measured for c in again]
    assert max(d[0] for d in drifts) <= 1e-10


def test_require_clean_raises_on_violation():
    bad = harness.DominanceCheck("x", "ctx", 2.0, -1.0, 1, 5)
    with pytest.raises(InvariantViolation):
        harness.require_clean([bad])
    harness.require_clean([])


def test_atomic_write_replaces(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    harness.atomic_write(p, "one")
    harness.atomic_write(p, "two")
    assert p.read_text() == "two"
    assert [q.name for q in p.parent.iterdir()] == ["f.txt"]


def test_config_hash_tracks_content():
    a = harness.config_from_dict(base_dict())
    d = copy.deepcopy(base_dict())
    d["thickness_nm"] = 100.0
    assert harness.config_from_dict(d).sha256 != a.sha256
    assert harness.config_from_dict(base_dict()).sha256 == a.sha256


def test_format_amplitude():
    assert harness.format_amplitude(-0.5 - 0.25j) == "-0.50000000000 - 0.25000000000i"
    assert math.isclose(float(harness.format_amplitude(0.1 + 0.2j).split()[0]), 0.1)
