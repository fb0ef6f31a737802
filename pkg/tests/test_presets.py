import pytest

from gearfault.errors import ArgumentError
from gearfault.presets import get_preset, load_preset_catalog, preset_gen_config


def test_bundled_catalog():
    catalog = load_preset_catalog()
    assert sorted(catalog) == ["op1500", "op2700"]
    slow, fast = catalog["op1500"], catalog["op2700"]
    assert slow.motor_rpm == 1500 and fast.motor_rpm == 2700
    # mesh fundamentals scale with motor speed
    for a, b in zip(slow.base_freqs_hz, fast.base_freqs_hz):
        assert b == pytest.approx(a * 2700 / 1500)
    # channel spread z > y > x for every class
    for row in slow.class_channel_stddev + fast.class_channel_stddev:
        assert row[2] > row[1] > row[0]
    assert "placeholder" in slow.tags


def test_preset_gen_config_is_valid():
    config = preset_gen_config(get_preset("op2700"), samples_per_class=4, seed=3)
    assert config.num_classes == 5
    assert config.num_channels == 3
    assert config.samples_per_class == 4
    assert config.seed == 3
    assert config.base_freqs_hz[0] == 450.0


def test_unknown_preset():
    with pytest.raises(ArgumentError):
        get_preset("op9999")


def test_malformed_entries_are_skipped(tmp_path):
    manifest = tmp_path / "presets.yaml"
    manifest.write_text(
        """
presets:
  - id: "ok"
    motor_rpm: 1000
    load_nm: 5
    base_freqs_hz: [100.0, 200.0]
    class_channel_stddev: [[1.0], [2.0]]
  - id: "broken"
    motor_rpm: 1000
""",
        encoding="utf-8",
    )
    catalog = load_preset_catalog(manifest)
    assert list(catalog) == ["ok"]
    assert catalog["ok"].harmonic_amps == [0.6, 0.3, 0.15]


def test_missing_manifest_gives_empty_catalog(tmp_path):
    assert load_preset_catalog(tmp_path / "absent.yaml") == {}
