"""Touchstone reader/writer: formats, port ordering, errors, round-trips."""

import numpy as np
import pytest

from simnet import TouchstoneFile, parse_touchstone, write_touchstone
from simnet.errors import TouchstoneError


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_parse_one_port_ma(tmp_path):
    path = _write(tmp_path, "a.s1p", "\n".join([
        "! simple reflection standard",
        "# GHz S MA R 50",
        "1.0 0.5 90",
        "2.0 0.25 -90",
    ]))
    ts = parse_touchstone(path)
    assert ts.n_ports == 1 and ts.n_frequencies == 2
    np.testing.assert_allclose(ts.frequency_points, [1e9, 2e9])
    np.testing.assert_allclose(ts.data[0, 0, 0], 0.5j, atol=1e-15)
    np.testing.assert_allclose(ts.data[1, 0, 0], -0.25j, atol=1e-15)
    assert ts.format == "MA" and ts.reference_impedance == 50.0


def test_parse_defaults_without_option_line(tmp_path):
    path = _write(tmp_path, "b.s1p", "3.5 1 0\n")
    ts = parse_touchstone(path)
    assert ts.frequency_points[0] == pytest.approx(3.5e9)
    assert ts.format == "MA" and ts.reference_impedance == 50.0
    assert ts.data[0, 0, 0] == pytest.approx(1.0)


def test_two_port_column_major_order(tmp_path):
    # the two-port exception: data runs s11 s21 s12 s22
    path = _write(tmp_path, "c.s2p", "\n".join([
        "# Hz S RI R 75",
        "1e6 1 0 2 0 3 0 4 0",
    ]))
    ts = parse_touchstone(path)
    assert ts.reference_impedance == 75.0
    np.testing.assert_allclose(ts.data[0], [[1.0, 3.0], [2.0, 4.0]],
                               atol=1e-15)


def test_parse_db_format_and_units(tmp_path):
    path = _write(tmp_path, "d.s1p", "\n".join([
        "# MHz S DB R 50",
        "100 -6.0205999132796 45",
    ]))
    ts = parse_touchstone(path)
    assert ts.frequency_points[0] == pytest.approx(1e8)
    expect = 0.5 * np.exp(1j * np.pi / 4)
    np.testing.assert_allclose(ts.data[0, 0, 0], expect, rtol=1e-12)


def test_multiport_row_wrapping(tmp_path):
    # n >= 3 uses one row per line, at most four pairs per line
    rows = []
    for i in range(5):
        vals = []
        for j in range(5):
            vals += [f"{i + 1}.0", f"{j + 1}.0"]
        rows.append(" ".join(vals[:8]))
        rows.append(" ".join(vals[8:]))
    path = _write(tmp_path, "e.s5p",
                  "# GHz S RI R 50\n1.0 " + rows[0] + "\n"
                  + "\n".join(rows[1:]) + "\n")
    ts = parse_touchstone(path)
    assert ts.data.shape == (1, 5, 5)
    for i in range(5):
        for j in range(5):
            assert ts.data[0, i, j] == pytest.approx((i + 1) + (j + 1) * 1j)


def test_nearest_frequency():
    ts = TouchstoneFile(n_ports=1, frequency_points=np.array([1e9, 2e9, 4e9]),
                        data=np.arange(3, dtype=complex).reshape(3, 1, 1))
    freq, matrix = ts.nearest(2.7e9)
    assert freq == 2e9 and matrix[0, 0] == 1.0 + 0j
    freq, _ = ts.nearest(1e12)
    assert freq == 4e9


def test_file_validation():
    with pytest.raises(ValueError):
        TouchstoneFile(n_ports=2, frequency_points=np.array([1e9]),
                       data=np.zeros((1, 3, 3), dtype=complex))
    with pytest.raises(ValueError):
        TouchstoneFile(n_ports=1, frequency_points=np.array([1e9, 2e9]),
                       data=np.zeros((1, 1, 1), dtype=complex))


@pytest.mark.parametrize("fmt", ["RI", "MA", "DB"])
@pytest.mark.parametrize("n_ports", [1, 2, 5, 8])
def test_round_trip(tmp_path, fmt, n_ports):
    rng = np.random.default_rng(n_ports)
    n_freq = 3
    data = rng.standard_normal((n_freq, n_ports, n_ports)) \
        + 1j * rng.standard_normal((n_freq, n_ports, n_ports))
    ts = TouchstoneFile(n_ports=n_ports,
                        frequency_points=np.array([1e9, 2e9, 28e9]),
                        data=data, format=fmt, reference_impedance=50.0)
    path = str(tmp_path / f"t.s{n_ports}p")
    write_touchstone(ts, path)
    back = parse_touchstone(path)
    assert back.format == fmt
    np.testing.assert_allclose(back.frequency_points, ts.frequency_points,
                               rtol=1e-15)
    np.testing.assert_allclose(back.data, data, rtol=1e-12, atol=1e-13)


def test_round_trip_with_exact_zeros(tmp_path):
    # DB of a zero entry is -inf; it must survive the trip back as zero
    data = np.zeros((1, 3, 3), dtype=complex)
    data[0, 0, 1] = 0.3 - 0.4j
    ts = TouchstoneFile(n_ports=3, frequency_points=np.array([1e9]),
                        data=data, format="DB")
    path = str(tmp_path / "z.s3p")
    write_touchstone(ts, path)
    back = parse_touchstone(path)
    np.testing.assert_allclose(back.data, data, atol=1e-15)


def test_write_rejects_mismatched_path(tmp_path):
    ts = TouchstoneFile(n_ports=2, frequency_points=np.array([1e9]),
                        data=np.zeros((1, 2, 2), dtype=complex))
    with pytest.raises(TouchstoneError):
        write_touchstone(ts, str(tmp_path / "t.s3p"))
    with pytest.raises(TouchstoneError):
        write_touchstone(ts, str(tmp_path / "t.dat"))


def test_parse_error_line_numbers(tmp_path):
    bad_option = _write(tmp_path, "f.s1p", "! c\n# GHz Y MA R 50\n1 1 0\n")
    with pytest.raises(TouchstoneError) as info:
        parse_touchstone(bad_option)
    assert info.value.line_number == 2

    bad_count = _write(tmp_path, "g.s1p", "# GHz S MA R 50\n1 1\n")
    with pytest.raises(TouchstoneError) as info:
        parse_touchstone(bad_count)
    assert info.value.line_number == 2

    non_monotone = _write(tmp_path, "h.s1p",
                          "# GHz S MA R 50\n2 1 0\n1 1 0\n")
    with pytest.raises(TouchstoneError) as info:
        parse_touchstone(non_monotone)
    assert info.value.line_number == 3


def test_parse_structural_errors(tmp_path):
    dup = _write(tmp_path, "i.s1p",
                 "# GHz S MA R 50\n# GHz S RI R 50\n1 1 0\n")
    with pytest.raises(TouchstoneError):
        parse_touchstone(dup)

    late = _write(tmp_path, "j.s1p", "1 1 0\n# GHz S MA R 50\n")
    with pytest.raises(TouchstoneError):
        parse_touchstone(late)

    empty = _write(tmp_path, "k.s1p", "! nothing here\n")
    with pytest.raises(TouchstoneError):
        parse_touchstone(empty)

    truncated = _write(tmp_path, "l.s3p",
                       "# GHz S RI R 50\n1 1 0 1 0 1 0\n1 0 1 0 1 0\n")
    with pytest.raises(TouchstoneError):
        parse_touchstone(truncated)

    with pytest.raises(TouchstoneError):
        parse_touchstone(str(tmp_path / "m.snp"))

    bad_r = _write(tmp_path, "n.s1p", "# GHz S MA R\n1 1 0\n")
    with pytest.raises(TouchstoneError):
        parse_touchstone(bad_r)

    missing = str(tmp_path / "absent.s1p")
    with pytest.raises(TouchstoneError):
        parse_touchstone(missing)
