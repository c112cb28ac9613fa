import dataclasses
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dynloss import nifti_io as nio
from dynloss.errors import (
    CorruptFileError,
    NiftiError,
    RangeError,
    UnsupportedDatatypeError,
    UnsupportedFormatError,
    UnsupportedVariantError,
)
from dynloss.volumes import LabelGrid, VoxelGrid
from nifti_fuzz import base_file, mutate

SAMPLES = {
    nio.UINT8: np.array([0, 1, 7, 255]),
    nio.INT16: np.array([-32768, -1, 0, 32767]),
    nio.INT32: np.array([-(2**31), -5, 0, 2**31 - 1]),
    nio.FLOAT32: np.array([-1.5, 0.0, 3.25e10, np.float32(1) / 3], dtype=np.float32),
}


def grid_for(code, dims=(2, 3, 4)):
    rng = np.random.default_rng(code)
    values = rng.choice(SAMPLES[code], size=int(np.prod(dims)))
    return VoxelGrid(dims, values.astype(nio.DATATYPES[code][0]), spacing=(0.7, 0.8, 2.5))


@pytest.mark.parametrize("code", sorted(nio.DATATYPES))
@pytest.mark.parametrize("order", ["<", ">"])
def test_round_trip_bit_identical(code, order):
    grid = grid_for(code)
    data = nio.write_volume(grid, code, endianness=order)
    back = nio.read_volume(data)
    assert back.dims == grid.dims
    assert back.values.dtype == nio.DATATYPES[code][0]
    assert back.values.tobytes() == grid.values.tobytes()
    assert back.spacing == tuple(float(np.float32(s)) for s in grid.spacing)
    assert nio.parse_header(data).endianness == order


def test_file_size_and_layout():
    grid = VoxelGrid.from_array(np.zeros((64, 64, 64), np.float32))
    data = nio.write_volume(grid, nio.FLOAT32)
    assert len(data) == 352 + 4 * 64**3
    hdr = nio.parse_header(data)
    assert hdr.vox_offset == 352 and hdr.magic == b"n+1\x00" and hdr.sizeof_hdr == 348
    assert data[348:352] == b"\x00" * 4


def test_x_fastest_on_disk():
    arr = np.arange(24, dtype=np.int16).reshape(2, 3, 4)
    data = nio.write_volume(VoxelGrid.from_array(arr), nio.INT16)
    on_disk = np.frombuffer(data, dtype="<i2", offset=352)
    assert on_disk[1] == arr[1, 0, 0] and on_disk[2] == arr[0, 1, 0] and on_disk[6] == arr[0, 0, 1]


def test_labels_round_trip_as_uint8():
    lab = LabelGrid.from_array(np.array([[[0, 1], [13, 2]]]), 13)
    back = nio.read_volume(nio.write_volume(lab, nio.UINT8), labels=True, num_classes=13)
    np.testing.assert_array_equal(back.labels, lab.labels)


@pytest.mark.parametrize(
    "code,values",
    [(nio.UINT8, [0, 300]), (nio.UINT8, [-1, 0]), (nio.INT16, [40000]), (nio.INT32, [2**31]), (nio.INT16, [1.5])],
)
def test_out_of_range_values(code, values):
    with pytest.raises(RangeError):
        nio.write_volume(VoxelGrid((len(values), 1, 1), np.array(values)), code)


def test_float32_overflow_is_range_error():
    with pytest.raises(RangeError):
        nio.write_volume(VoxelGrid((1, 1, 1), np.array([1e300])), nio.FLOAT32)


def test_unsupported_write_datatype():
    with pytest.raises(UnsupportedDatatypeError):
        nio.write_volume(VoxelGrid((1, 1, 1), np.zeros(1)), 64)


def with_header(data, **changes):
    hdr = dataclasses.replace(nio.parse_header(data), **changes)
    return nio.header_bytes(hdr) + data[348:]


def test_scaling_convention():
    data = nio.write_volume(VoxelGrid((1, 1, 1), np.array([2.0], np.float32)), nio.FLOAT32)
    assert nio.read_volume(with_header(data, scl_slope=2.0, scl_inter=1.0)).values[0] == 5.0
    assert nio.read_volume(with_header(data, scl_slope=0.0, scl_inter=9.0)).values[0] == 2.0


def test_byte_swap_detection():
    data = nio.write_volume(grid_for(nio.INT16), nio.INT16, endianness=">")
    assert data[:4] == b"\x00\x00\x01\x5c"
    little = nio.write_volume(grid_for(nio.INT16), nio.INT16)
    assert little[:4] == b"\x5c\x01\x00\x00"
    assert nio.parse_header(data).endianness == ">"
    np.testing.assert_array_equal(nio.read_volume(data).values, nio.read_volume(little).values)


def test_two_file_variant_rejected():
    data = bytearray(base_file())
    data[344:348] = b"ni1\x00"
    with pytest.raises(UnsupportedVariantError):
        nio.parse_header(bytes(data))


def test_header_errors():
    good = base_file()
    with pytest.raises(CorruptFileError):
        nio.parse_header(good[:100])
    with pytest.raises(CorruptFileError):
        nio.read_volume(good[:-1])
    with pytest.raises(UnsupportedDatatypeError):
        nio.read_volume(with_header(good, datatype=64, bitpix=64))
    with pytest.raises(UnsupportedFormatError):
        nio.read_volume(with_header(good, bitpix=16))
    with pytest.raises(UnsupportedFormatError):
        nio.read_volume(with_header(good, dim=(4, 3, 4, 5, 2, 1, 1, 1)))


@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=4, max_size=4))
def test_any_magic_mutation_rejected(magic):
    data = bytearray(base_file())
    if magic == b"n+1\x00":
        return
    data[344:348] = magic
    with pytest.raises((UnsupportedFormatError, UnsupportedVariantError)):
        nio.parse_header(bytes(data))


@settings(max_examples=200, deadline=None)
@given(st.integers(-(2**31), 2**31 - 1))
def test_any_sizeof_hdr_mutation_rejected(value):
    if value in (348, struct.unpack(">i", struct.pack("<i", 348))[0]):
        return
    data = bytearray(base_file())
    data[0:4] = struct.pack("<i", value)
    with pytest.raises(UnsupportedFormatError):
        nio.parse_header(bytes(data))


def test_fuzz_only_typed_errors():
    good = base_file()
    rng = np.random.default_rng(1234)
    outcomes = {"ok": 0, "rejected": 0}
    for _ in range(300):
        data = mutate(good, rng)
        try:
            nio.read_volume(data)
            outcomes["ok"] += 1
        except NiftiError:
            outcomes["rejected"] += 1
    assert outcomes["ok"] > 0 and outcomes["rejected"] > 0


def test_opaque_fields_preserved():
    good = bytearray(base_file())
    good[148:228] = b"orientation test".ljust(80, b"\x00")  # descrip
    good[252:254] = struct.pack("<h", 1)  # qform_code
    hdr, raw = nio.read_nifti(bytes(good))
    grid = nio.read_volume(bytes(good))
    again = nio.write_volume(grid, nio.FLOAT32, header=hdr)
    assert again == bytes(good)


def test_non_positive_pixdim_falls_back_to_unit_spacing():
    good = base_file()
    grid = nio.read_volume(with_header(good, pixdim=(1.0, 0.0, float("nan"), -2.0, 0, 0, 0, 0)))
    assert grid.spacing == (1.0, 1.0, 1.0)


# ---------------------------------------------------------------- logs


class FakeReport:
    scores = [[0.5, 0.25], [0.75, 0.125]]
    weights = [[1.0, 1.0], [0.1, 1.9607843137254903]]
    frozen = [[False, False], [True, False]]
    checks = [{"class_id": 1, "C": 0.0, "triggered": False}, {"class_id": 1, "C": 0.05, "triggered": True}]


def test_run_log_columns_and_rows():
    assert nio.write_run_log([]) == b"epoch,class_id,score,weight,frozen,triggered,C\n"
    rows = nio.run_log_rows(FakeReport)
    assert len(rows) == 4
    text = nio.write_run_log(rows[:1]).decode().splitlines()
    assert text == ["epoch,class_id,score,weight,frozen,triggered,C", "1,1,0.5,1.0,0,0,0.0"]
    assert rows[3].c is None and rows[2].triggered and rows[2].c == 0.05
    assert nio.read_run_log(nio.write_run_log(rows)) == rows


def test_run_log_rejects_wrong_columns():
    with pytest.raises(ValueError):
        nio.read_run_log(b"a,b\n1,2\n")


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_report_json_is_lossless(scores):
    d = {"schema_version": 1, "final_dice": scores}
    back = json.loads(nio.write_report(d))
    assert back["final_dice"] == scores


def test_report_json_rejects_nan():
    with pytest.raises(ValueError):
        nio.write_report({"x": float("nan")})
