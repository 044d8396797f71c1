"""Wire protocol constants and value encoding.

The protocol is UTF-8, LF-terminated lines. Requests:

    LOAD <path>
    REGISTER MODEL <name> <nfeatures> <noutputs>
    REGISTER FEATURE <model> <index> <name> <type>
    REGISTER OUTPUT <model> <name> <type>
    SET <model> <name>=<value>(,<name>=<value>)*
    RUN <model>
    GET <model> <output>
    FREE <model>
    STATUS
    CLOSE

Responses are `OK`, `OK <value>`, or `ERR <CODE> <message>` with codes PARSE,
FEATURE, OUTPUT, NOFEATURES, NOMODEL, INTERNAL. Value types are int, bool
(encoded 0|1) and float. Floats use the shortest decimal form that round
trips to the same double, so transcripts are bit-stable across languages.
The exact error message catalog lives in docs/protocol.md; the reference
server must reproduce these strings byte for byte.
"""

from __future__ import annotations

VERBS = ("LOAD", "REGISTER", "SET", "RUN", "GET", "FREE", "STATUS", "CLOSE")
ERROR_CODES = ("PARSE", "FEATURE", "OUTPUT", "NOFEATURES", "NOMODEL", "INTERNAL")
VALUE_TYPES = ("int", "bool", "float")


class WireError(Exception):
    pass


def format_number(value) -> str:
    """Shortest round-trip decimal for ints and doubles."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def format_typed(value, value_type: str) -> str:
    if value_type == "bool":
        return "1" if value else "0"
    if value_type == "int":
        return str(int(value))
    if value_type == "float":
        return repr(float(value))
    raise WireError(f"unknown value type '{value_type}'")


def parse_typed(text: str, value_type: str):
    """Parse a wire value of the declared type; raises WireError."""
    if value_type == "bool":
        if text == "1":
            return True
        if text == "0":
            return False
        raise WireError(f"invalid bool '{text}'")
    if value_type == "int":
        try:
            return int(text)
        except ValueError:
            raise WireError(f"invalid int '{text}'") from None
    if value_type == "float":
        try:
            return float(text)
        except ValueError:
            raise WireError(f"invalid float '{text}'") from None
    raise WireError(f"unknown value type '{value_type}'")


def ok(value=None) -> str:
    return "OK" if value is None else f"OK {value}"


def err(code: str, message: str) -> str:
    assert code in ERROR_CODES
    return f"ERR {code} {message}"
