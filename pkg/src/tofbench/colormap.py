"""Color index mapping and the built-in 256-entry color table.

Rendering works in two stages: data values map to u8 color indices here,
and the index image maps to RGB through COLOR_TABLE (or to gray levels
directly, for PGM export).  Index 0 is reserved for "nothing": zero or
negative values, dead detector rows, and screen area past the data.

Both intensity scales send 0 to index 0 and positive values into 1..255,
so index 0 is unambiguous in every rendered image.
"""

from __future__ import annotations

import numpy as np

__all__ = ["COLOR_TABLE", "IntensityScale", "map_to_indices"]

from enum import Enum


class IntensityScale(str, Enum):
    LINEAR = "linear"
    LOG = "log"


# Thermal ramp, black through blue/violet/red/orange/yellow to white,
# frozen as literal bytes so every build renders identical images.
_TABLE_HEX = (
    "00000000000300000701000a01000d01001101001402001702001b02001e02002102002503002803002b03002f030032"
    "04003504003904003c04003f04004305004605004905004d05005006005306005706005a06005d060061070064070067"
    "07006b07006e0800710800750800780a00790d007b0f007c12007e14007f1700801900821c00831e0085200086230087"
    "25008928008a2a008c2d008d2f008e3100903400913600933900943b00953e009740009843009a45009b47009c4a009e"
    "4c009f4f00a15100a25400a35600a55900a65b00a85d00a96000aa6200ac6500ad6700af6a00b06c00b16e00b37100b4"
    "7300b67600b77800b87b00ba7d00bb8000bd8200be8401bb8601b88702b58903b18b04ae8d04ab8e05a89006a59207a2"
    "94079f95089b970998990a959b0a929c0b8f9e0c8ca00d88a20d85a30e82a50f7fa7107ca91079aa1176ac1272ae136f"
    "b0136cb21469b31566b51563b71660b9175cba1859bc1856be1953c01a50c11b4dc31b4ac51c46c71d43c81e40ca1e3d"
    "cc1f3ace2037cf2133d12130d3222dd5232ad62427d82424da2521dc261ddd271adf2717e12814e22a14e22c13e32d13"
    "e32f13e43112e43312e53412e53611e63811e63a10e73c10e73d10e83f0fe8410fe9430fea450eea460eeb480eeb4a0d"
    "ec4c0dec4e0ced4f0ced510cee530bee550bef560bef580af05a0af15c0af15e09f25f09f26109f36308f36508f46608"
    "f46807f56a07f56c06f66e06f66f06f77105f87305f87505f97704f97804fa7a04fa7c03fb7e03fb8002fc8102fc8302"
    "fd8501fd8701fe8801fe8a00ff8c00ff8e02ff9103ff9305ff9607ff9808ff9b0aff9d0cffa00dffa20fffa411ffa712"
    "ffa914ffac16ffae17ffb119ffb31bffb61cffb81effba20ffbd21ffbf23ffc225ffc426ffc728ffc92affcc2bffce2d"
    "ffd02fffd330ffd532ffd834ffda35ffdd37ffdf39ffe23affe43cffe544ffe64dffe855ffe95effea66ffeb6fffec77"
    "ffed80ffef88fff091fff199fff2a2fff3aafff4b3fff6bbfff7c4fff8ccfff9d5fffaddfffbe6fffdeefffef7ffffff"
)

COLOR_TABLE = np.frombuffer(bytes.fromhex(_TABLE_HEX), dtype=np.uint8).reshape(256, 3)
COLOR_TABLE.flags.writeable = False


def map_to_indices(values, scale: IntensityScale, value_range: tuple) -> np.ndarray:
    """Map data values to u8 color indices over the given range.

    Linear: index = ceil(255 * v / vmax).  Log: the same with
    log1p-transformed values, which keeps 0 at exactly 0 without needing
    a positive floor.  Values <= 0 always land on index 0; vmax <= 0
    (nothing positive anywhere) renders everything as 0.
    """
    scale = IntensityScale(scale)
    v = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
    vmax = float(value_range[1])
    if vmax <= 0.0:
        return np.zeros(v.shape, dtype=np.uint8)
    if scale is IntensityScale.LOG:
        frac = np.log1p(v) / np.log1p(vmax)
    else:
        frac = v / vmax
    idx = np.ceil(255.0 * np.minimum(frac, 1.0))
    # denormal fractions can ceil to 0; the positive->nonzero promise wins
    idx = np.where(v > 0, np.maximum(idx, 1.0), 0.0)
    return idx.astype(np.uint8)
