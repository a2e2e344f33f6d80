"""Line-based scenario language.

One directive per line, ``#`` starts a comment::

    mode VU
    csr write vsatp 0x8000000000040000
    map stage1 va=0x10000 pa=0x200000 size=4K perms=rwu vmid=1
    access load va=0x10008
    expect ok pa=0x200008
    expect walk accesses=15

``expect`` lines bind to the closest preceding ``access``, ``csr`` or
``trap`` directive.
"""

import re
from dataclasses import dataclass, field

from ..causes import Cause, Interrupt
from ..machine_state import CSR_BY_NAME, Mode
from ..pagetable import SIZE_NAMES
from ..tlb import FenceKind

MODES = tuple(m.value for m in Mode)
ACCESSES = ("load", "store", "fetch")
BINDABLE = ("access", "csr", "trap")
_HEX = re.compile(r"0x[0-9a-fA-F]+(_[0-9a-fA-F]+)*\Z")
_DEC = re.compile(r"[0-9]+\Z")

# key -> "hex" (0x-prefixed), "num" (decimal or hex), "size", "perms", "ad", "cause", "mode"
_KEY_TYPES = {
    "va": "hex", "pa": "hex", "value": "hex", "len": "hex", "addr": "hex", "tval": "hex",
    "htval": "hex", "gpa": "hex", "epc": "hex",
    "asid": "num", "vmid": "num", "id": "num", "accesses": "num",
    "size": "size", "perms": "perms", "ad": "ad", "cause": "cause",
    "handled_in": "mode", "from": "mode",
}


class ParseError(Exception):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


@dataclass(frozen=True)
class CauseRef:
    code: int
    interrupt: bool = False

    def __str__(self) -> str:
        enum = Interrupt if self.interrupt else Cause
        try:
            return enum(self.code).name
        except ValueError:
            return str(self.code)


@dataclass
class Directive:
    verb: str
    args: tuple[str, ...] = ()
    params: dict = field(default_factory=dict)
    line: int = field(default=0, compare=False)

    def __str__(self) -> str:
        return serialize_directive(self)


@dataclass
class Scenario:
    name: str
    directives: list[Directive] = field(default_factory=list)


def parse_cause(text: str) -> CauseRef:
    if _DEC.match(text):
        return CauseRef(int(text))
    if text in Cause.__members__:
        return CauseRef(int(Cause[text]))
    if text in Interrupt.__members__:
        return CauseRef(int(Interrupt[text]), interrupt=True)
    names = ", ".join(list(Cause.__members__) + list(Interrupt.__members__))
    raise ValueError(f"unknown cause {text!r}; valid causes: {names}")


def _value(key: str, text: str):
    kind = _KEY_TYPES.get(key)
    if kind is None:
        raise ValueError(f"unknown parameter {key!r}")
    if kind == "hex":
        if not _HEX.match(text):
            raise ValueError(f"malformed hex value {key}={text!r} (expected 0x...)")
        return int(text, 16)
    if kind == "num":
        if _HEX.match(text):
            return int(text, 16)
        if _DEC.match(text):
            return int(text)
        raise ValueError(f"malformed number {key}={text!r}")
    if kind == "size":
        if text.upper() not in SIZE_NAMES:
            raise ValueError(f"bad page size {text!r} (4K, 2M or 1G)")
        return text.upper()
    if kind == "perms":
        if not re.fullmatch(r"[rwxug-]+", text):
            raise ValueError(f"bad permission string {text!r}")
        return text
    if kind == "ad":
        if not re.fullmatch(r"[ad-]+", text):
            raise ValueError(f"bad A/D string {text!r}")
        return text
    if kind == "cause":
        return parse_cause(text)
    if text not in MODES:
        raise ValueError(f"bad mode {text!r}; expected one of {', '.join(MODES)}")
    return Mode(text)


def _split(tokens: list[str]) -> tuple[list[str], dict]:
    args, params = [], {}
    for tok in tokens:
        if "=" in tok:
            key, _, text = tok.partition("=")
            if key in params:
                raise ValueError(f"duplicate parameter {key!r}")
            params[key] = text
        elif params:
            raise ValueError(f"positional operand {tok!r} after key=value operands")
        else:
            args.append(tok)
    return args, params


# verb -> {first arg -> (extra positional count, required keys, optional keys)}
_GRAMMAR = {
    "mem": {"back": (0, {"pa", "len"}, set()), "write64": (0, {"pa", "value"}, set()),
            "read64": (0, {"pa"}, set())},
    "map": {k: (0, {"va", "pa", "size", "perms"}, {"asid", "vmid", "ad"})
            for k in ("stage1", "gstage")},
    "access": {k: (0, {"va"}, {"epc"}) for k in ACCESSES},
    "trap": {"inject": (0, {"cause"}, {"tval", "gpa", "epc"}), "return": (0, set(), {"from"})},
    "fence": {k.value: (0, set(), {"addr", "id"}) for k in FenceKind},
    "expect": {
        "ok": (0, set(), {"pa", "value"}),
        "trap": (0, {"cause"}, {"handled_in", "tval", "htval"}),
        "walk": (0, {"accesses"}, set()),
        "tlb": (1, set(), set()),
        "mode": (1, set(), set()),
        "error": (0, set(), set()),
        "csr": (0, set(), set()),
    },
}


def _parse_line(text: str, lineno: int) -> Directive | None:
    text = text.split("#", 1)[0].strip()
    if not text:
        return None
    verb, *rest = text.split()
    try:
        args, raw = _split(rest)
        if verb == "mode":
            if len(args) != 1 or raw or args[0] not in MODES:
                raise ValueError(f"usage: mode <{'|'.join(MODES)}>")
            return Directive("mode", (args[0],), {}, lineno)
        if verb == "csr":
            return _parse_csr(args, raw, lineno)
        if verb not in _GRAMMAR:
            raise ValueError(f"unknown directive {verb!r}")
        forms = _GRAMMAR[verb]
        if not args or args[0] not in forms:
            raise ValueError(f"usage: {verb} <{'|'.join(forms)}> ...")
        sub = args[0]
        extra, required, optional = forms[sub]
        if len(args) - 1 != extra:
            raise ValueError(f"{verb} {sub} takes {extra} positional operand(s)")
        if verb == "expect" and sub == "csr":
            if not raw:
                raise ValueError("usage: expect csr <name>=0x...")
            params = {}
            for key, val in raw.items():
                if key not in CSR_BY_NAME:
                    raise ValueError(f"unknown CSR {key!r}")
                if not _HEX.match(val):
                    raise ValueError(f"malformed hex value {key}={val!r} (expected 0x...)")
                params[key] = int(val, 16)
            return Directive(verb, (sub,), params, lineno)
        missing = required - raw.keys()
        if missing:
            raise ValueError(f"{verb} {sub} needs {', '.join(sorted(missing))}")
        unknown = raw.keys() - required - optional
        if unknown:
            raise ValueError(f"{verb} {sub} does not take {', '.join(sorted(unknown))}")
        params = {k: _value(k, v) for k, v in raw.items()}
        if verb == "expect" and sub == "tlb" and args[1] not in ("hit", "miss"):
            raise ValueError("usage: expect tlb <hit|miss>")
        if verb == "expect" and sub == "mode" and args[1] not in MODES:
            raise ValueError(f"usage: expect mode <{'|'.join(MODES)}>")
        if verb == "map" and sub == "gstage" and "asid" in params:
            raise ValueError("G-stage mappings take vmid=, not asid=")
        return Directive(verb, tuple(args), params, lineno)
    except ValueError as exc:
        raise ParseError(lineno, str(exc)) from None


def _parse_csr(args: list[str], raw: dict, lineno: int) -> Directive:
    if raw or len(args) < 2 or args[0] not in ("read", "write"):
        raise ValueError("usage: csr <read|write> <name> [0xvalue]")
    op, name = args[0], args[1]
    if name not in CSR_BY_NAME and not _HEX.match(name):
        raise ValueError(f"unknown CSR {name!r}")
    if op == "read":
        if len(args) != 2:
            raise ValueError("usage: csr read <name>")
        return Directive("csr", ("read", name), {}, lineno)
    if len(args) != 3 or not _HEX.match(args[2]):
        raise ValueError("usage: csr write <name> 0xvalue")
    return Directive("csr", ("write", name), {"value": int(args[2], 16)}, lineno)


def parse(text: str, name: str = "scenario") -> Scenario:
    scenario = Scenario(name)
    bound = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        directive = _parse_line(line, lineno)
        if directive is None:
            continue
        if directive.verb == "expect":
            if not bound:
                raise ParseError(lineno, "expect must follow an access, csr or trap directive")
        else:
            bound = directive.verb in BINDABLE
        scenario.directives.append(directive)
    return scenario


def _fmt(key: str, value) -> str:
    kind = _KEY_TYPES.get(key)
    if isinstance(value, Mode):
        return value.value
    if kind in ("hex",) or (kind is None and isinstance(value, int)):
        return f"0x{value:x}"
    return str(value)


def serialize_directive(d: Directive) -> str:
    parts = [d.verb, *d.args]
    if d.verb == "csr" and "value" in d.params:
        parts.append(f"0x{d.params['value']:x}")
    else:
        parts += [f"{k}={_fmt(k, v)}" for k, v in d.params.items()]
    return " ".join(parts)


def serialize(scenario: Scenario) -> str:
    return "".join(serialize_directive(d) + "\n" for d in scenario.directives)
