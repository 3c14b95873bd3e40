"""Meter-board security surface: C12-style levels L0-L5 and tables 42-46.

Protected tables (42 passwords, 45 keys, 46 host access) are write-only from
the optical or wireless port and read back empty. Everything on the board is
held in clear, so a physical dump returns it verbatim, and the serial link to
the communication board carries keys in clear as well.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import BadPassword, Denied, NoPhysicalAccess


class Level(enum.IntEnum):
    L0 = 0
    L1 = 1
    L2 = 2
    L3 = 3
    L4 = 4
    L5 = 5


class Transport(enum.Enum):
    OPTICAL = "OPTICAL"
    WIRELESS = "WIRELESS"


class Surface(enum.Enum):
    MEMORY = "MEMORY"
    SERIAL_BUS = "SERIAL_BUS"


DEFAULT_PASSWORD = "00000000"

PASSWORDS = 42
DEFAULT_ACCESS = 43
ACCESS_CONTROL = 44
KEYS = 45
HOST_ACCESS = 46
GENERAL_CONFIG = 0
CURRENT_REGISTERS = 23
PROTECTED_TABLES = frozenset({PASSWORDS, KEYS, HOST_ACCESS})

COMMANDS: Dict[str, Level] = {
    "read_basic": Level.L0,
    "read_meter": Level.L1,
    "demand_reset": Level.L2,
    "set_datetime": Level.L3,
    "set_tou": Level.L3,
    "program": Level.L4,
    "configure_device": Level.L5,
}

# (read_level, write_level) per table id.
DEFAULT_PERMISSIONS: Dict[int, Tuple[Level, Level]] = {
    GENERAL_CONFIG: (Level.L0, Level.L5),
    CURRENT_REGISTERS: (Level.L1, Level.L4),
    PASSWORDS: (Level.L5, Level.L5),
    DEFAULT_ACCESS: (Level.L1, Level.L5),
    ACCESS_CONTROL: (Level.L1, Level.L5),
    KEYS: (Level.L5, Level.L5),
    HOST_ACCESS: (Level.L5, Level.L5),
}


@dataclass
class HostAccessRecord:
    host_id: str
    auth_key: bytes
    enc_key: bytes
    permissions: Level = Level.L1

    def to_json(self):
        return {
            "host_id": self.host_id,
            "auth_key": self.auth_key.hex(),
            "enc_key": self.enc_key.hex(),
            "permissions": int(self.permissions),
        }

    @classmethod
    def from_json(cls, d):
        return cls(d["host_id"], bytes.fromhex(d["auth_key"]), bytes.fromhex(d["enc_key"]), Level(d["permissions"]))


@dataclass
class MeterSecurityTables:
    passwords: List[str] = field(default_factory=lambda: [DEFAULT_PASSWORD] * 5)
    default_permissions: Dict[int, Tuple[Level, Level]] = field(
        default_factory=lambda: dict(DEFAULT_PERMISSIONS)
    )
    overrides: Dict[int, Tuple[Level, Level]] = field(default_factory=dict)
    keys: List[bytes] = field(default_factory=list)
    host_access: List[HostAccessRecord] = field(default_factory=list)
    extended_keys: List[bytes] = field(default_factory=list)

    def permission(self, table_id: int) -> Tuple[Level, Level]:
        if table_id in self.overrides:
            return self.overrides[table_id]
        return self.default_permissions.get(table_id, (Level.L5, Level.L5))

    def to_json(self) -> dict:
        perm = lambda d: {str(k): [int(r), int(w)] for k, (r, w) in sorted(d.items())}
        return {
            "42": list(self.passwords),
            "43": perm(self.default_permissions),
            "44": perm(self.overrides),
            "45": [k.hex() for k in self.keys],
            "46": [h.to_json() for h in self.host_access],
            "extended_keys": [k.hex() for k in self.extended_keys],
        }

    @classmethod
    def from_json(cls, d: dict) -> "MeterSecurityTables":
        perm = lambda m: {int(k): (Level(r), Level(w)) for k, (r, w) in m.items()}
        return cls(
            passwords=list(d.get("42", [DEFAULT_PASSWORD] * 5)),
            default_permissions=perm(d["43"]) if "43" in d else dict(DEFAULT_PERMISSIONS),
            overrides=perm(d.get("44", {})),
            keys=[bytes.fromhex(k) for k in d.get("45", [])],
            host_access=[HostAccessRecord.from_json(h) for h in d.get("46", [])],
            extended_keys=[bytes.fromhex(k) for k in d.get("extended_keys", [])],
        )


class MeterBoard:
    """One meter's board: tables, registers, and the serial link to the comm board."""

    def __init__(self, meter_id: str, tables: Optional[MeterSecurityTables] = None):
        self.meter_id = meter_id
        self.tables = tables or MeterSecurityTables()
        self.registers = {"kwh": 0, "demand_kw": 0, "datetime": 0, "tou": "flat", "program": 0, "config": {}}
        self.serial_bus: List[bytes] = []
        self.physical_access = False

    def serial_transfer(self, label: str, payload: bytes) -> bytes:
        """Meter board -> communication board; the frame is logged in clear."""
        self.serial_bus.append(label.encode() + b"=" + payload.hex().encode())
        return payload

    def fetch_key(self, index: int = 0) -> bytes:
        return self.serial_transfer(f"table45[{index}]", self.tables.keys[index])

    def snapshot(self) -> dict:
        return {"meter_id": self.meter_id, "tables": self.tables.to_json(), "registers": dict(self.registers)}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.snapshot(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "MeterBoard":
        d = json.loads(Path(path).read_text())
        board = cls(d["meter_id"], MeterSecurityTables.from_json(d["tables"]))
        board.registers.update(d.get("registers", {}))
        return board


@dataclass
class OperatorSession:
    meter: MeterBoard = field(repr=False)
    level: Level
    transport: Transport = Transport.OPTICAL
    authenticated: bool = False


def login(meter: MeterBoard, level, password: Optional[str] = None, transport=Transport.OPTICAL) -> OperatorSession:
    level = Level(level)
    if level == Level.L0:
        return OperatorSession(meter, level, transport, authenticated=False)
    if password is None or password != meter.tables.passwords[level - 1]:
        raise BadPassword(f"wrong password for {level.name}")
    return OperatorSession(meter, level, transport, authenticated=True)


def allowed(level, command: str) -> bool:
    return Level(level) >= COMMANDS[command]


def execute_command(session: OperatorSession, command: str, **args):
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    required = COMMANDS[command]
    if session.level < required:
        raise Denied(f"{command} requires {required.name}", required_level=required)
    regs = session.meter.registers
    if command == "read_basic":
        return {"meter_id": session.meter.meter_id}
    if command == "read_meter":
        return {"kwh": regs["kwh"], "demand_kw": regs["demand_kw"]}
    if command == "demand_reset":
        regs["demand_kw"] = 0
    elif command == "set_datetime":
        regs["datetime"] = args.get("value", regs["datetime"])
    elif command == "set_tou":
        regs["tou"] = args.get("value", regs["tou"])
    elif command == "program":
        regs["program"] += 1
    elif command == "configure_device":
        regs["config"].update(args)
    return "ok"


def table_read(session: OperatorSession, table_id: int):
    if table_id in PROTECTED_TABLES:
        return []
    read_level, _ = session.meter.tables.permission(table_id)
    if session.level < read_level:
        raise Denied(f"table {table_id} read requires {read_level.name}", required_level=read_level)
    t = session.meter.tables
    if table_id == DEFAULT_ACCESS:
        return {k: (int(r), int(w)) for k, (r, w) in t.default_permissions.items()}
    if table_id == ACCESS_CONTROL:
        return {k: (int(r), int(w)) for k, (r, w) in t.overrides.items()}
    if table_id == CURRENT_REGISTERS:
        return {"kwh": session.meter.registers["kwh"], "demand_kw": session.meter.registers["demand_kw"]}
    if table_id == GENERAL_CONFIG:
        return {"meter_id": session.meter.meter_id}
    return []


def table_write(session: OperatorSession, table_id: int, values) -> str:
    _, write_level = session.meter.tables.permission(table_id)
    if session.level < write_level:
        raise Denied(f"table {table_id} write requires {write_level.name}", required_level=write_level)
    t = session.meter.tables
    if table_id == PASSWORDS:
        if isinstance(values, dict):
            for lvl, pw in values.items():
                t.passwords[Level(lvl) - 1] = pw
        else:
            if len(values) != 5:
                raise ValueError("table 42 holds exactly five passwords")
            t.passwords = list(values)
    elif table_id == DEFAULT_ACCESS:
        t.default_permissions.update({k: (Level(r), Level(w)) for k, (r, w) in values.items()})
    elif table_id == ACCESS_CONTROL:
        t.overrides.update({k: (Level(r), Level(w)) for k, (r, w) in values.items()})
    elif table_id == KEYS:
        t.keys = [bytes(k) for k in values]
    elif table_id == HOST_ACCESS:
        t.host_access = list(values)
    elif table_id == CURRENT_REGISTERS:
        session.meter.registers.update(values)
    else:
        raise Denied(f"table {table_id} is not writable")
    return "ok"


def physical_dump(meter: MeterBoard, surface=Surface.MEMORY) -> bytes:
    if not meter.physical_access:
        raise NoPhysicalAccess(f"no physical access to {meter.meter_id}")
    if Surface(surface) is Surface.MEMORY:
        t = meter.tables.to_json()
        dump = {k: t[k] for k in ("42", "45", "46", "extended_keys")}
        return json.dumps(dump, sort_keys=True).encode()
    return b"\n".join(meter.serial_bus)
