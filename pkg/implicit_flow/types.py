"""
SPDX-License-Identifier: BSD-2
"""


def CLASS_INT_ATTRS_from_string(cls, str_value, fixup_map=None):
    """
    Given a class, lookup int attributes by name and return that attribute value.
    :param cls: The class to search.
    :param str_value: The key for the attribute in the class.
    """

    friendly = {
        key.upper(): value
        for (key, value) in vars(cls).items()
        if isinstance(value, int) and not key.startswith("_")
    }

    if fixup_map is not None and str_value.upper() in fixup_map:
        str_value = fixup_map[str_value.upper()]

    return friendly[str_value.upper()]


RC_LAYER_SHIFT = 16
RC_ERROR_MASK = 0xFFFF


class IFLOW_FRIENDLY_INT(int):
    _FIXUP_MAP = {}

    @classmethod
    def parse(cls, value):
        # If it's a string initializer value, see if it matches anything in the list
        if isinstance(value, str):
            try:
                value = CLASS_INT_ATTRS_from_string(cls, value, cls._FIXUP_MAP)
            except KeyError:
                raise RuntimeError(
                    f'Could not convert friendly name to value, got: "{value}"'
                )

        if not isinstance(value, int):
            raise RuntimeError(f'Expected int object, got: "{type(value)}"')

        return value

    @classmethod
    def iterator(cls):
        return filter(
            lambda kv: isinstance(kv, int),
            (v for k, v in vars(cls).items() if not k.startswith("_")),
        )

    @classmethod
    def contains(cls, value):
        return value in cls.iterator()


class IFLOW_LAYER(IFLOW_FRIENDLY_INT):
    """The component an error code originates from."""

    NN = 1
    SIREN = 2
    HYPER = 3
    FLOW = 4
    SYNTH = 5
    PIPELINE = 6
    CLI = 7
    _FIXUP_MAP = {"HYPERNET": "HYPER", "NN_CORE": "NN"}

    _NAMES = {
        1: "nn",
        2: "siren",
        3: "hypernet",
        4: "flow",
        5: "synth",
        6: "pipeline",
        7: "cli",
    }

    @classmethod
    def describe(cls, value):
        return cls._NAMES.get(value, f"layer {value}")


class IFLOW_RC(IFLOW_FRIENDLY_INT):
    SUCCESS = 0
    BAD_SHAPE = 1
    NON_FINITE = 2
    DIVERGED = 3
    DEGENERATE_INTERVAL = 4
    BAD_MAGIC = 5
    BAD_VERSION = 6
    TRUNCATED = 7
    BAD_DIMENSIONS = 8
    OUT_OF_RANGE = 9
    BAD_CONFIG = 10
    BAD_SPEC = 11
    BAD_VALUE = 12
    IO_ERROR = 13

    _FIXUP_MAP = {"BADMAGIC": "BAD_MAGIC", "SHAPE": "BAD_SHAPE"}

    _MESSAGES = {
        0: "success",
        1: "dimension mismatch",
        2: "non-finite value",
        3: "optimization diverged",
        4: "degenerate time interval",
        5: "bad magic number",
        6: "unsupported format version",
        7: "truncated buffer",
        8: "nonpositive dimensions",
        9: "value out of range",
        10: "bad configuration",
        11: "bad scene specification",
        12: "bad value",
        13: "input/output error",
    }

    @classmethod
    def make(cls, layer, error):
        """Combine a layer and an error into a single return code.

        Both parts may be given by name, ``IFLOW_RC.make("flow", "bad_magic")``.
        """
        layer = IFLOW_LAYER.parse(layer)
        error = cls.parse(error)
        if not IFLOW_LAYER.contains(layer):
            raise ValueError(f"unknown layer {layer}")
        if not cls.contains(error):
            raise ValueError(f"unknown error {error}")
        return (int(layer) << RC_LAYER_SHIFT) | int(error)

    @classmethod
    def describe(cls, value):
        return cls._MESSAGES.get(value, f"unknown error {value}")
