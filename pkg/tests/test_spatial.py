import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photon_echo.errors import InvalidParameterError, UndefinedRatioError
from photon_echo.protocols import build_three_level_3pe, build_two_level_3pe
from photon_echo.spatial import (
    CSV_COLUMNS,
    K_MAG,
    BeamGeometry,
    atom_coherences,
    directional_polarization,
    directional_snr,
    fluorescence,
    median_unmatched_snr,
    phase_matching_scan,
    random_directions,
    read_directions,
    sample_atoms,
    scan_to_csv,
)

BEAMS = BeamGeometry.boxcar()


def protocol(eps=1e-3, sep=20.0):
    return build_two_level_3pe(0.0, sep, sep + 100.0, 2 * eps)


def rotation(theta, phi):
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s * np.exp(-1j * phi)], [-1j * s * np.exp(1j * phi), c]])


def brute_force_coherence(p, r, delta, beams):
    """Step one atom through the pulse sequence with explicit 2×2 matrices."""
    rho = np.diag([1.0 + 0j, 0.0])
    last = p.events[0].time
    for ev in p.events:
        dt = ev.time - last
        free = np.diag([1.0, np.exp(-1j * delta * dt)])
        rho = free @ rho @ free.conj().T
        last = ev.time
        if ev.kind == "dephase_marker":
            rho = np.diag(np.diag(rho))
        else:
            u = rotation(ev.param, r @ beams.wavevector(ev.k_label))
            rho = u @ rho @ u.conj().T
    free = np.diag([1.0, np.exp(-1j * delta * (p.echo_time - last))])
    rho = free @ rho @ free.conj().T
    return rho[0, 1]


# -- sampling -------------------------------------------------------------------


def test_sample_atoms_shapes_and_bounds():
    ens = sample_atoms(1000, (2.0, 3.0, 4.0), seed=1)
    assert ens.positions.shape == (1000, 3) and ens.detunings.shape == (1000,)
    assert np.all(np.abs(ens.positions) <= np.array([1.0, 1.5, 2.0]))
    assert ens.geometry == (2.0, 3.0, 4.0)
    assert sample_atoms(1, 1.0, seed=0).n_atoms == 1


@pytest.mark.parametrize("m,box", [(0, 1.0), (2.5, 1.0), (10, 0.0), (10, (1.0, -1.0, 1.0))])
def test_sample_atoms_rejects_bad_input(m, box):
    with pytest.raises(InvalidParameterError):
        sample_atoms(m, box, seed=0)


def test_sample_atoms_is_deterministic():
    a, b = sample_atoms(50, 10.0, seed=9), sample_atoms(50, 10.0, seed=9)
    assert np.array_equal(a.positions, b.positions) and np.array_equal(a.detunings, b.detunings)
    assert not np.array_equal(a.positions, sample_atoms(50, 10.0, seed=10).positions)


def test_sampled_detunings_follow_width():
    det = sample_atoms(200_000, 1.0, seed=3, width=2.0).detunings
    assert abs(det.mean()) < 5 * 2.0 / math.sqrt(det.size)
    assert det.std() == pytest.approx(2.0, rel=0.01)


def test_beam_geometry():
    assert np.linalg.norm(BEAMS.phase_matched) == pytest.approx(K_MAG, rel=1e-14)
    np.testing.assert_allclose(BEAMS.k_out, BEAMS.phase_matched, atol=1e-14)
    with pytest.raises(InvalidParameterError):
        BeamGeometry(np.zeros(3), BEAMS.k2, BEAMS.k3, BEAMS.k_out)
    with pytest.raises(InvalidParameterError):
        BEAMS.pointing((0, 0, 0))


# -- single-atom coherences -----------------------------------------------------


def test_coherences_match_brute_force():
    rng = np.random.default_rng(4)
    ens = sample_atoms(40, 3.0, seed=2)
    for _ in range(3):
        th = rng.uniform(0, 2 * math.pi, 3)
        sep = rng.uniform(0.5, 10)
        p = build_two_level_3pe(0.0, sep, sep + 20, *th)
        got = atom_coherences(p, ens, BEAMS)
        want = [brute_force_coherence(p, r, d, BEAMS) for r, d in zip(ens.positions, ens.detunings)]
        np.testing.assert_allclose(got, want, atol=1e-12)


def test_protocol_without_labels_is_rejected():
    with pytest.raises(InvalidParameterError):
        atom_coherences(build_three_level_3pe(), sample_atoms(3, 1.0, seed=0), BEAMS)


# -- directional emission -------------------------------------------------------


def test_tiny_sample_radiates_isotropically():
    p = protocol()
    ens = sample_atoms(500, 1e-7, seed=5)
    scan = phase_matching_scan(p, ens, BEAMS, random_directions(30, 6))
    values = np.array([i for _, i in scan])
    assert np.ptp(values) / values.mean() <= 1e-6


def test_direction_dependence_grows_linearly_with_size():
    p = protocol()
    dirs = random_directions(30, 6)

    def spread(box):
        values = np.array([i for _, i in phase_matching_scan(p, sample_atoms(500, box, seed=5), BEAMS, dirs)])
        return np.ptp(values) / values.mean()

    # first order in k·r: bounded by 2·|Δk|·L·√3 with |Δk| <= 4π
    assert spread(1e-2) <= 2 * 2 * K_MAG * 1e-2 * math.sqrt(3)
    assert spread(1e-3) / spread(1e-6) == pytest.approx(1e3, rel=0.05)


def test_matched_field_is_coherent_sum():
    m, eps = 4000, 1e-3
    p = protocol(eps)
    ens = sample_atoms(m, 100.0, seed=8)
    amp = directional_polarization(p, ens, BEAMS)
    # each atom contributes -iε/2; the rest is a random walk of size ~ε√M/2
    assert abs(amp) == pytest.approx(m * eps / 2, rel=5 / math.sqrt(m))
    assert amp.imag < 0


def test_unmatched_field_is_random_walk():
    eps = 1e-3
    p = protocol(eps)
    dirs = random_directions(40, 1)
    for m in (1000, 4000):
        ens = sample_atoms(m, 100.0, seed=2)
        med = np.median([i for _, i in phase_matching_scan(p, ens, BEAMS, dirs)])
        # a sum of randomly phased terms has |.|² exponentially distributed with
        # mean Σ|c_j|², so the median sits at ln 2 of that
        total = np.sum(np.abs(atom_coherences(p, ens, BEAMS)) ** 2)
        assert med / total == pytest.approx(math.log(2), rel=0.5)


def test_single_atom_scan_is_flat():
    scan = phase_matching_scan(protocol(0.1), sample_atoms(1, 100.0, seed=0), BEAMS, random_directions(15, 2))
    values = [i for _, i in scan]
    assert np.ptp(values) <= 1e-15 * max(values)


def test_matched_peak_dominates_scan():
    m = 2000
    p = protocol()
    ens = sample_atoms(m, 100.0, seed=11)
    rows = phase_matching_scan(p, ens, BEAMS, np.vstack([BEAMS.matched_direction, random_directions(50, 3)]))
    matched, rest = rows[0][1], np.median([i for _, i in rows[1:]])
    assert matched / rest >= m / 10


def test_matched_intensity_quadruples_when_atoms_double():
    p = protocol()
    small = abs(directional_polarization(p, sample_atoms(5000, 100.0, seed=1), BEAMS)) ** 2
    large = abs(directional_polarization(p, sample_atoms(10000, 100.0, seed=1), BEAMS)) ** 2
    assert large / small == pytest.approx(4.0, rel=0.1)


@pytest.mark.parametrize("m", [1000, 10000])
def test_directional_snr_matches_ensemble_value(m):
    eps = 1 / math.sqrt(m)
    ens = sample_atoms(m, 100.0, seed=m)
    assert directional_snr(protocol(eps), ens, BEAMS) == pytest.approx(1 / 2, rel=0.05)


def test_unmatched_snr_is_tiny():
    m = 10000
    eps = 1 / math.sqrt(m)
    assert median_unmatched_snr(protocol(eps), sample_atoms(m, 100.0, seed=4), BEAMS) < 1e-4


def test_snr_without_input_is_zero():
    ens = sample_atoms(500, 100.0, seed=4)
    assert directional_snr(protocol(0.0), ens, BEAMS) == pytest.approx(0.0, abs=1e-25)


def test_snr_without_fluorescence_is_undefined():
    dark = build_two_level_3pe(0.0, 20.0, 120.0, 0.01, 0.0, 0.0)
    ens = sample_atoms(10, 10.0, seed=0)
    with pytest.raises(UndefinedRatioError):
        directional_snr(dark, ens, BEAMS)
    with pytest.raises(UndefinedRatioError):
        median_unmatched_snr(dark, ens, BEAMS)


def test_fluorescence_is_half_the_atoms():
    ens = sample_atoms(3000, 100.0, seed=0)
    assert fluorescence(protocol(), ens, BEAMS) == pytest.approx(3000 / 2, rel=1e-12)


def _slope(ms, values):
    return np.polyfit(np.log(ms), np.log(values), 1)[0]


def test_matched_scaling_exponent():
    ms = np.array([500, 1000, 2000, 4000, 8000])
    values = [abs(directional_polarization(protocol(), sample_atoms(m, 100.0, seed=7), BEAMS)) ** 2 for m in ms]
    assert _slope(ms, values) == pytest.approx(2.0, abs=0.1)


def test_unmatched_scaling_exponent():
    ms = np.array([500, 1000, 2000, 4000, 8000])
    k = random_directions(1, 99)[0]
    values = []
    for m in ms:
        runs = [abs(directional_polarization(protocol(), sample_atoms(m, 100.0, seed=s), BEAMS.pointing(k))) ** 2 for s in range(20)]
        values.append(np.mean(runs))
    assert _slope(ms, values) == pytest.approx(1.0, abs=0.2)


def test_non_rephased_term_averages_out():
    # at large separation the term carrying e^{-iΔ(t43 + t21)} cancels across atoms,
    # leaving only the rephased contribution
    m, eps = 20000, 1e-3
    ens = sample_atoms(m, 100.0, seed=21)
    far = directional_polarization(protocol(eps, sep=20.0), ens, BEAMS)
    assert far == pytest.approx(-0.5j * m * eps, rel=3 / math.sqrt(m))


def test_scan_is_bit_identical_across_runs():
    p = protocol()
    dirs = random_directions(10, 0)
    a = phase_matching_scan(p, sample_atoms(300, 50.0, seed=42), BEAMS, dirs)
    b = phase_matching_scan(p, sample_atoms(300, 50.0, seed=42), BEAMS, dirs)
    assert scan_to_csv(a) == scan_to_csv(b)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), m=st.integers(1, 200))
def test_scan_intensities_are_bounded(seed, m):
    ens = sample_atoms(m, 20.0, seed=seed)
    rows = phase_matching_scan(protocol(0.05), ens, BEAMS, random_directions(5, seed))
    bound = np.sum(np.abs(atom_coherences(protocol(0.05), ens, BEAMS))) ** 2
    assert all(0 <= i <= bound * (1 + 1e-12) for _, i in rows)


# -- I/O --------------------------------------------------------------------------


def test_csv_columns():
    rows = phase_matching_scan(protocol(), sample_atoms(20, 10.0, seed=0), BEAMS, random_directions(3, 0))
    parsed = list(csv.reader(io.StringIO(scan_to_csv(rows))))
    assert tuple(parsed[0]) == CSV_COLUMNS
    assert len(parsed) == 4
    for (d, i), line in zip(rows, parsed[1:]):
        assert [float(x) for x in line] == [*d, i]


def test_read_directions(tmp_path):
    j = tmp_path / "d.json"
    j.write_text(json.dumps([[0, 0, 2], [1, 0, 0]]))
    np.testing.assert_allclose(read_directions(j), [[0, 0, 1], [1, 0, 0]])
    c = tmp_path / "d.csv"
    c.write_text("x,y,z\n0,3,0\n")
    np.testing.assert_allclose(read_directions(c), [[0, 1, 0]])
    bad = tmp_path / "bad.json"
    bad.write_text("[[1, 2]]")
    with pytest.raises(InvalidParameterError):
        read_directions(bad)
    zero = tmp_path / "zero.csv"
    zero.write_text("0,0,0\n")
    with pytest.raises(InvalidParameterError):
        read_directions(zero)
