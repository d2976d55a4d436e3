import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from quantastream.errors import ConfigError, FormatError
from quantastream.formats import (
    PipelineConfig,
    build_ladder,
    config_to_dict,
    pack_bits,
    parse_config,
    parse_config_dict,
    read_bitplane_header,
    read_bitplanes,
    read_flux,
    read_pgm,
    read_stack,
    write_bitplanes,
    write_flux,
    write_pgm,
    write_stack,
    write_stack_arrays,
)
from quantastream.sensor import BitPlane
from quantastream.sketch import ExposureLadder, ExposureStack, Sketch, quantize_u8


def plane_from_bits(bits, t=0):
    return BitPlane(np.asarray(bits, dtype=np.uint8), timestamp=t)


class TestBitplaneFormat:
    def test_canonical_packing_vector(self):
        # 16-pixel pattern 1010 1010 1111 0000 -> 0xAA 0xF0, MSB first
        bits = np.array([[1, 0, 1, 0, 1, 0, 1, 0, 1, 1, 1, 1, 0, 0, 0, 0]], dtype=np.uint8)
        assert pack_bits(bits) == b"\xaa\xf0"

    def test_roundtrip_single_alternating_frame(self, tmp_path):
        path = tmp_path / "one.qsb"
        bits = np.indices((5, 7)).sum(axis=0) % 2
        write_bitplanes(path, [plane_from_bits(bits)], 20_000.0)
        frames = list(read_bitplanes(path))
        assert len(frames) == 1
        assert_array_equal(frames[0].bits, bits)
        assert frames[0].timestamp == 0

    def test_header_and_payload_arithmetic(self, tmp_path):
        path = tmp_path / "s.qsb"
        rng = np.random.default_rng(0)
        planes = [plane_from_bits(rng.integers(0, 2, (9, 5)), t) for t in range(3)]
        write_bitplanes(path, planes, 10_000.0)
        # 40-byte header + frames * ceil(45 / 8)
        assert path.stat().st_size == 40 + 3 * 6
        header = read_bitplane_header(path)
        assert (header.width, header.height, header.frame_count) == (5, 9, 3)
        assert header.frame_rate_hz == 10_000.0

    def test_spec_scale_file_size_formula(self):
        # header is fixed 40 bytes; 4096 frames of 256x256 pack to 8192 each
        assert 40 + 4096 * ((256 * 256 + 7) // 8) == 33_554_472

    def test_roundtrip_stream_bit_identical(self, tmp_path):
        path = tmp_path / "r.qsb"
        rng = np.random.default_rng(1)
        planes = [plane_from_bits(rng.integers(0, 2, (16, 16)), t) for t in range(64)]
        write_bitplanes(path, planes, 20_000.0)
        back = list(read_bitplanes(path))
        for orig, rel in zip(planes, back):
            assert_array_equal(orig.bits, rel.bits)
        # write what was read: byte-identical file
        path2 = tmp_path / "r2.qsb"
        write_bitplanes(path2, back, 20_000.0)
        assert path.read_bytes() == path2.read_bytes()

    def test_truncated_file_names_missing_frame(self, tmp_path):
        path = tmp_path / "t.qsb"
        rng = np.random.default_rng(2)
        planes = [plane_from_bits(rng.integers(0, 2, (8, 8)), t) for t in range(4)]
        write_bitplanes(path, planes, 20_000.0)
        blob = path.read_bytes()
        path.write_bytes(blob[: 40 + 2 * 8 + 3])   # cut inside frame 2
        with pytest.raises(FormatError, match="frame 2"):
            list(read_bitplanes(path))

    def test_bad_magic_and_version(self, tmp_path):
        path = tmp_path / "m.qsb"
        write_bitplanes(path, [plane_from_bits(np.zeros((4, 4)))], 20_000.0)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            read_bitplane_header(path)
        blob[:4] = b"QSB1"
        blob[4] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            read_bitplane_header(path)

    def test_empty_stream_rejected(self, tmp_path):
        with pytest.raises(FormatError, match="empty"):
            write_bitplanes(tmp_path / "e.qsb", [], 20_000.0)

    def test_shape_drift_rejected(self, tmp_path):
        planes = [plane_from_bits(np.zeros((4, 4))), plane_from_bits(np.zeros((4, 5)), 1)]
        with pytest.raises(FormatError, match="shape"):
            write_bitplanes(tmp_path / "d.qsb", planes, 20_000.0)


def polled_stack(seed=0, h=6, w=5):
    ladder = ExposureLadder.geometric(4, 16.0, 256.0)
    sk = Sketch(ladder, w, h)
    rng = np.random.default_rng(seed)
    for t in range(32):
        sk.update(BitPlane(rng.integers(0, 2, (h, w), dtype=np.uint8), timestamp=t))
    return sk.poll(include_raw=True)


class TestStackFormat:
    def test_u8_roundtrip_bit_identical(self, tmp_path):
        stack = polled_stack()
        path = tmp_path / "s.qsx"
        write_stack(path, stack, dtype="u8")
        sf = read_stack(path)
        assert sf.dtype == "u8"
        assert sf.timestamp == 32
        assert sf.windows == stack.windows
        assert_array_equal(sf.planes, stack.quantized)
        path2 = tmp_path / "s2.qsx"
        write_stack_arrays(path2, sf.planes, sf.windows, sf.timestamp, "u8")
        assert path.read_bytes() == path2.read_bytes()

    def test_f32_roundtrip_bit_identical(self, tmp_path):
        stack = polled_stack(1)
        path = tmp_path / "f.qsx"
        write_stack(path, stack, dtype="f32")
        sf = read_stack(path)
        assert sf.dtype == "f32"
        assert_array_equal(sf.planes, stack.raw.astype(np.float32))
        path2 = tmp_path / "f2.qsx"
        write_stack_arrays(path2, sf.planes, sf.windows, sf.timestamp, "f32")
        assert path.read_bytes() == path2.read_bytes()

    def test_u8_payload_matches_poll_quantization(self, tmp_path):
        stack = polled_stack(2)
        path = tmp_path / "q.qsx"
        write_stack(path, stack, dtype="u8")
        sf = read_stack(path)
        assert_array_equal(sf.planes, quantize_u8(stack.raw))

    def test_all_255_payload(self, tmp_path):
        raw = np.ones((2, 3, 3))
        stack = ExposureStack(0, (256.0, 16.0), quantize_u8(raw), raw)
        path = tmp_path / "w.qsx"
        write_stack(path, stack, dtype="u8")
        payload = path.read_bytes()[29 + 2 * 8:]
        assert payload == b"\xff" * 18

    def test_window_order_enforced(self, tmp_path):
        ladder = ExposureLadder.geometric()
        assert all(a > b for a, b in zip(ladder.windows, ladder.windows[1:]))
        with pytest.raises(FormatError, match="decreasing"):
            write_stack_arrays(tmp_path / "o.qsx", np.zeros((2, 2, 2)), (16.0, 256.0), 0, "u8")

    def test_f32_requires_raw(self, tmp_path):
        stack = ExposureStack(0, (16.0,), np.zeros((1, 2, 2), dtype=np.uint8))
        with pytest.raises(FormatError, match="raw"):
            write_stack(tmp_path / "x.qsx", stack, dtype="f32")

    def test_truncation_reports_offset(self, tmp_path):
        stack = polled_stack(3)
        path = tmp_path / "t.qsx"
        write_stack(path, stack, dtype="u8")
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(FormatError, match="byte"):
            read_stack(path)

    def test_flux_roundtrip(self, tmp_path):
        data = np.random.default_rng(4).uniform(0, 5, (7, 9))
        path = tmp_path / "g.qsx"
        write_flux(path, data, timestamp=123)
        back, t = read_flux(path)
        assert t == 123
        assert_array_equal(back, data.astype(np.float32).astype(np.float64))


class TestFuzzedHeaders:
    @given(blob=st.binary(min_size=0, max_size=120))
    @settings(max_examples=150, deadline=None)
    def test_random_blobs_raise_typed_errors(self, blob, tmp_path_factory):
        path = tmp_path_factory.mktemp("fuzz") / "f.bin"
        path.write_bytes(blob)
        with pytest.raises(FormatError):
            read_bitplane_header(path)
        with pytest.raises(FormatError):
            read_stack(path)

    def test_valid_magic_crazy_dimensions(self, tmp_path):
        path = tmp_path / "h.qsb"
        path.write_bytes(struct.pack("<4sIIIQdQ", b"QSB1", 1, 2**31, 7, 1, 1e4, 0))
        with pytest.raises(FormatError, match="dimensions"):
            read_bitplane_header(path)
        path.write_bytes(struct.pack("<4sIIIQdQ", b"QSB1", 1, 60_000, 60_000, 1, 1e4, 0))
        with pytest.raises(FormatError, match="overflow"):
            read_bitplane_header(path)


class TestPgm:
    def test_one_pixel_zero(self, tmp_path):
        path = tmp_path / "z.pgm"
        write_pgm(path, np.zeros((1, 1)), peak=1.0)
        assert path.read_bytes() == b"P5\n1 1\n255\n\x00"

    def test_gradient_monotone_bytes(self, tmp_path):
        path = tmp_path / "g.pgm"
        ramp = np.linspace(0.0, 1.0, 64)[None]
        write_pgm(path, ramp, peak=1.0)
        data = read_pgm(path)
        assert data.shape == (1, 64)
        assert np.all(np.diff(data.astype(int)) >= 0)
        assert data[0, 0] == 0 and data[0, -1] == 255

    def test_roundtrip_quantization(self, tmp_path):
        img = np.random.default_rng(5).uniform(0, 2.0, (9, 4))
        path = tmp_path / "r.pgm"
        write_pgm(path, img, peak=2.0)
        back = read_pgm(path)
        assert_allclose(back / 255.0 * 2.0, img, atol=2.0 / 255.0 * 0.5 + 1e-12)

    def test_range_errors(self, tmp_path):
        with pytest.raises(ValueError, match="range|lie in"):
            write_pgm(tmp_path / "x.pgm", np.array([[1.5]]), peak=1.0)
        with pytest.raises(ValueError):
            write_pgm(tmp_path / "x.pgm", np.array([[-0.1]]), peak=1.0)


class TestConfig:
    def test_empty_object_gives_full_defaults(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{}")
        cfg = parse_config(path)
        assert cfg.ladder.channels == 8
        assert cfg.sensor.dark_rate == 7.5
        assert cfg.sensor.frame_rate == 20_000.0
        ladder = build_ladder(cfg.ladder)
        assert ladder.channels == 8
        assert ladder.windows[0] == 4096.0 and ladder.windows[-1] == 16.0

    def test_negative_dark_rate_names_field(self):
        with pytest.raises(ConfigError, match=r"sensor\.dark_rate"):
            parse_config_dict({"sensor": {"dark_rate": -1.0}})

    def test_unknown_keys_rejected_with_path(self):
        with pytest.raises(ConfigError, match="unknown"):
            parse_config_dict({"sensor": {"gain": 2.0}})
        with pytest.raises(ConfigError, match="unknown"):
            parse_config_dict({"bogus_section": {}})
        with pytest.raises(ConfigError, match=r"scene\.trajectory\.wiggle"):
            parse_config_dict({"scene": {"trajectory": {"wiggle": 1}}})

    def test_dyadic_window_override(self):
        cfg = parse_config_dict({"ladder": {"windows": [4096, 1024, 256, 64, 16]}})
        ladder = build_ladder(cfg.ladder)
        assert ladder.channels == 5
        assert ladder.windows == (4096.0, 1024.0, 256.0, 64.0, 16.0)

    def test_serialized_defaults_round_trip(self):
        cfg = PipelineConfig()
        again = parse_config_dict(json.loads(json.dumps(config_to_dict(cfg))))
        assert again == cfg

    def test_parse_error_reports_line_and_column(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{\n  "sensor": {,}\n}')
        with pytest.raises(ConfigError, match="line 2"):
            parse_config(path)

    def test_stream_section_validation(self):
        cfg = parse_config_dict({"stream": {"poll_rates": [10, 100], "frames": 5000}})
        assert cfg.stream.poll_rates == (10.0, 100.0)
        with pytest.raises(ConfigError, match=r"stream\.poll_rates\[0\]"):
            parse_config_dict({"stream": {"poll_rates": [0.0]}})
