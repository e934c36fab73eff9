import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from hwclfa import blobio
from hwclfa.errors import ManifestMismatch, TruncatedBlob


@settings(max_examples=40, deadline=None)
@given(st.lists(hnp.arrays(np.float32, hnp.array_shapes(max_dims=3, max_side=5),
                           elements=st.floats(-1e6, 1e6, width=32)), max_size=4))
def test_pack_unpack_round_trip(arrays):
    tensors = {f"t{i}": a for i, a in enumerate(arrays)}
    data = blobio.pack({"k": 1}, tensors)
    doc, back = blobio.unpack(data)
    assert doc["k"] == 1 and list(back) == list(tensors)
    for name, a in tensors.items():
        np.testing.assert_array_equal(back[name], a)
    assert blobio.pack({"k": 1}, back) == data


def test_corruption_is_reported():
    data = blobio.pack({}, {"a": np.ones(3)})
    with pytest.raises(TruncatedBlob):
        blobio.unpack(data[:-1])
    with pytest.raises(TruncatedBlob):
        blobio.unpack(data[:10])
    with pytest.raises(ManifestMismatch):
        blobio.unpack(b"XXXX" + data[4:])
    with pytest.raises(ManifestMismatch):
        blobio.unpack(data + b"\0" * 4)
