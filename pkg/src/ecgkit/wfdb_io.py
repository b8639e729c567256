"""Bit-exact reader (and minimal Fmt16 writer) for WFDB records.

A record consists of a text header (``NAME.hea``), one or more binary
signal files (``*.dat``, formats 16 / 212 / 80) and optionally binary
annotation files (``NAME.atr``, ``NAME.qrs``, ...).  Signals are stored
as integer ADC samples; :func:`adc_to_physical` converts them to mV
using each lead's gain and baseline.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MalformedHeader,
    MissingSignalFile,
    RangeOverflow,
    TruncatedData,
    UnknownCode,
    UnsupportedFormat,
)

SUPPORTED_FORMATS = (16, 212, 80)

DEFAULT_GAIN = 200.0
DEFAULT_FS = 250.0
DEFAULT_UNITS = "mV"

# Annotation code -> display symbol.  Codes >= 30 are vendor/extension
# territory and fall through to lenient handling unless the caller
# supplies a custom table.
DEFAULT_SYMBOL_TABLE = {
    1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A",
    9: "S", 10: "E", 11: "j", 12: "/", 13: "Q", 14: "~", 16: "|",
    18: "s", 19: "T", 20: "*", 21: "D", 22: '"', 23: "=", 24: "p",
    25: "B", 26: "^", 27: "t", 28: "(", 29: ")",
}

_SKIP, _NUM, _SUB, _CHN, _AUX = 59, 60, 61, 62, 63


@dataclass
class LeadSpec:
    """Per-signal line of a WFDB header."""

    file_name: str
    fmt: int
    gain: float = DEFAULT_GAIN
    baseline: int = 0
    units: str = DEFAULT_UNITS
    lead_name: str = ""

    def __post_init__(self):
        if self.fmt not in SUPPORTED_FORMATS:
            raise UnsupportedFormat(f"signal format {self.fmt} not in {SUPPORTED_FORMATS}")
        if self.gain == 0:
            self.gain = DEFAULT_GAIN


@dataclass
class RecordHeader:
    record_name: str
    n_sig: int
    fs: float
    sig_len: int
    leads: list[LeadSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.n_sig != len(self.leads):
            raise MalformedHeader(
                f"header declares {self.n_sig} signals but {len(self.leads)} signal lines found"
            )
        if self.fs <= 0:
            raise MalformedHeader(f"sampling frequency must be positive, got {self.fs}")
        if self.sig_len < 0:
            raise MalformedHeader(f"signal length must be >= 0, got {self.sig_len}")


@dataclass
class EcgRecord:
    """Multi-lead signal in physical units (mV), shape ``[n_sig, sig_len]``."""

    header: RecordHeader
    signal: np.ndarray

    def __post_init__(self):
        self.signal = np.asarray(self.signal, dtype=np.float64)
        if self.signal.ndim != 2 or self.signal.shape != (self.header.n_sig, self.header.sig_len):
            raise MalformedHeader(
                f"signal shape {self.signal.shape} does not match header "
                f"({self.header.n_sig}, {self.header.sig_len})"
            )
        if not np.all(np.isfinite(self.signal)):
            raise MalformedHeader("signal contains non-finite values")

    @property
    def fs(self) -> float:
        return self.header.fs


@dataclass
class AnnotationEntry:
    sample: int
    symbol: str
    chan: int = 0
    num: int = 0
    aux: str | None = None


@dataclass
class AnnotationSet:
    entries: list[AnnotationEntry] = field(default_factory=list)

    def __post_init__(self):
        prev = -1
        for e in self.entries:
            if e.sample < 0:
                raise MalformedHeader(f"annotation sample {e.sample} < 0")
            if e.sample < prev:
                raise MalformedHeader("annotation samples must be non-decreasing")
            prev = e.sample

    def __len__(self) -> int:
        return len(self.entries)

    def samples(self) -> np.ndarray:
        return np.array([e.sample for e in self.entries], dtype=np.int64)

    def symbols(self) -> list[str]:
        return [e.symbol for e in self.entries]


def _num(token: str, kind: str, cast=int):
    try:
        return cast(token)
    except ValueError:
        raise MalformedHeader(f"non-numeric {kind} field: {token!r}") from None


def parse_header(text: bytes | str) -> RecordHeader:
    """Parse a ``.hea`` file into a :class:`RecordHeader`.

    Defaults follow WFDB conventions: fs -> 250 Hz, gain 0/absent -> 200
    adu/mV, units -> "mV", baseline -> ADC zero.  Comment lines start
    with ``#``.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii", errors="replace")
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise MalformedHeader("empty header")

    rec = lines[0].split()
    if len(rec) < 2:
        raise MalformedHeader(f"record line needs at least name and n_sig: {lines[0]!r}")
    record_name = rec[0]
    if "/" in record_name:
        raise UnsupportedFormat("multi-segment records are not supported")
    n_sig = _num(rec[1], "n_sig")
    fs = DEFAULT_FS
    if len(rec) >= 3:
        # "fs" or "fs/counter_fs(counter_base)"
        fs = _num(rec[2].split("/")[0], "fs", float)
    sig_len = _num(rec[3], "sig_len") if len(rec) >= 4 else 0

    leads = []
    if len(lines) - 1 < n_sig:
        raise MalformedHeader(f"expected {n_sig} signal lines, found {len(lines) - 1}")
    for ln in lines[1 : 1 + n_sig]:
        fields = ln.split()
        if len(fields) < 2:
            raise MalformedHeader(f"signal line needs at least file name and format: {ln!r}")
        file_name = fields[0]
        fmt_tok = fields[1]
        # strip xN / :skew / +offset modifiers; only x1 / skew 0 / offset 0 supported
        base = fmt_tok
        for sep in ("x", ":", "+"):
            if sep in base:
                base, _, mod = base.partition(sep)
                if _num(mod.split(":")[0].split("+")[0] or "0", "format modifier") not in (0, 1):
                    raise UnsupportedFormat(f"unsupported format modifier in {fmt_tok!r}")
        fmt = _num(base, "format")

        gain, baseline, units = DEFAULT_GAIN, None, DEFAULT_UNITS
        if len(fields) >= 3:
            gspec = fields[2]
            if "/" in gspec:
                gspec, _, units = gspec.partition("/")
            if "(" in gspec:
                gspec, _, btok = gspec.partition("(")
                baseline = _num(btok.rstrip(")"), "baseline")
            gain = _num(gspec, "gain", float)
        adc_zero = _num(fields[4], "adc_zero") if len(fields) >= 5 else 0
        if baseline is None:
            baseline = adc_zero
        lead_name = " ".join(fields[8:]) if len(fields) > 8 else f"lead_{len(leads)}"
        leads.append(
            LeadSpec(file_name=file_name, fmt=fmt, gain=gain, baseline=baseline,
                     units=units, lead_name=lead_name)
        )

    return RecordHeader(record_name=record_name, n_sig=n_sig, fs=fs, sig_len=sig_len, leads=leads)


def decode_samples(raw: bytes, fmt: int, n_sig: int) -> np.ndarray:
    """Decode a signal file into an int32 ADC matrix ``[n_sig, n_samples]``.

    Samples are interleaved round-robin across signals.  Fmt212 packs two
    12-bit two's-complement samples into 3 bytes, Fmt16 is little-endian
    int16, Fmt80 is offset-binary bytes (value - 128).
    """
    if n_sig < 1:
        raise MalformedHeader(f"n_sig must be >= 1, got {n_sig}")
    if fmt == 212:
        if len(raw) % 3:
            raise TruncatedData(f"format 212 needs whole 3-byte frames, got {len(raw)} bytes")
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        s1 = ((b[:, 1] & 0x0F) << 8) | b[:, 0]
        s2 = ((b[:, 1] & 0xF0) << 4) | b[:, 2]
        flat = np.empty(2 * len(b), dtype=np.int32)
        flat[0::2] = s1
        flat[1::2] = s2
        flat[flat > 2047] -= 4096  # 12-bit sign extension
    elif fmt == 16:
        if len(raw) % 2:
            raise TruncatedData(f"format 16 needs whole 2-byte samples, got {len(raw)} bytes")
        flat = np.frombuffer(raw, dtype="<i2").astype(np.int32)
    elif fmt == 80:
        flat = np.frombuffer(raw, dtype=np.uint8).astype(np.int32) - 128
    else:
        raise UnsupportedFormat(f"signal format {fmt} not in {SUPPORTED_FORMATS}")

    if len(flat) % n_sig:
        raise TruncatedData(
            f"{len(flat)} samples do not form whole frames across {n_sig} signals"
        )
    return np.ascontiguousarray(flat.reshape(-1, n_sig).T)


def adc_to_physical(adc, gain: float, baseline: int):
    """(adc - baseline) / gain, in the lead's physical units (mV)."""
    return (np.asarray(adc, dtype=np.float64) - baseline) / gain


def physical_to_adc(phys, gain: float, baseline: int) -> np.ndarray:
    """Quantize physical values back to ADC integers (nearest)."""
    return np.rint(np.asarray(phys, dtype=np.float64) * gain + baseline).astype(np.int64)


def read_record(directory: str | os.PathLike, name: str) -> EcgRecord:
    """Read header + signal files from ``directory`` and return physical units.

    Channels come back in header order; lengths are cross-checked against
    the header's ``sig_len`` (0 means "take what the files contain").
    """
    hea_path = os.path.join(os.fspath(directory), f"{name}.hea")
    if not os.path.exists(hea_path):
        raise MissingSignalFile(f"header not found: {hea_path}")
    with open(hea_path, "rb") as f:
        header = parse_header(f.read())

    # group leads by signal file, preserving channel order
    file_order: list[str] = []
    file_leads: dict[str, list[int]] = {}
    for idx, lead in enumerate(header.leads):
        if lead.file_name not in file_leads:
            file_order.append(lead.file_name)
            file_leads[lead.file_name] = []
        file_leads[lead.file_name].append(idx)

    adc = [None] * header.n_sig
    sig_len = header.sig_len
    for fname in file_order:
        idxs = file_leads[fname]
        fmts = {header.leads[i].fmt for i in idxs}
        if len(fmts) > 1:
            raise MalformedHeader(f"signals in {fname} use mixed formats {sorted(fmts)}")
        path = os.path.join(os.fspath(directory), fname)
        if not os.path.exists(path):
            raise MissingSignalFile(f"signal file not found: {path}")
        with open(path, "rb") as f:
            mat = decode_samples(f.read(), fmts.pop(), len(idxs))
        if sig_len == 0:
            sig_len = mat.shape[1]
        if mat.shape[1] < sig_len:
            raise TruncatedData(
                f"{fname} holds {mat.shape[1]} samples per signal, header says {sig_len}"
            )
        for row, chan in enumerate(idxs):
            adc[chan] = mat[row, :sig_len]

    signal = np.empty((header.n_sig, sig_len), dtype=np.float64)
    for i, lead in enumerate(header.leads):
        signal[i] = adc_to_physical(adc[i], lead.gain, lead.baseline)
    header = RecordHeader(header.record_name, header.n_sig, header.fs, sig_len, header.leads)
    return EcgRecord(header=header, signal=signal)


def write_record(record: EcgRecord, directory: str | os.PathLike) -> list[str]:
    """Write ``record`` as a Fmt16 WFDB record; returns the file names written.

    All channels go into one ``NAME.dat``, round-robin interleaved.
    Raises :class:`RangeOverflow` if any quantized sample leaves the
    int16 range.
    """
    hdr = record.header
    dat_name = f"{hdr.record_name}.dat"
    adc = np.empty((hdr.n_sig, hdr.sig_len), dtype=np.int64)
    for i, lead in enumerate(hdr.leads):
        adc[i] = physical_to_adc(record.signal[i], lead.gain, lead.baseline)
    if adc.size and (adc.max() > 32767 or adc.min() < -32768):
        raise RangeOverflow(
            f"ADC values [{adc.min()}, {adc.max()}] exceed the 16-bit range"
        )
    adc16 = adc.astype(np.int16)

    lines = [f"{hdr.record_name} {hdr.n_sig} {_fmt_fs(hdr.fs)} {hdr.sig_len}"]
    for i, lead in enumerate(hdr.leads):
        first = int(adc16[i, 0]) if hdr.sig_len else 0
        checksum = int(np.int16(adc16[i].astype(np.int64).sum() & 0xFFFF)) if hdr.sig_len else 0
        gain = _fmt_fs(lead.gain)
        lines.append(
            f"{dat_name} 16 {gain}({lead.baseline})/{lead.units} 16 0 {first} {checksum} 0 {lead.lead_name}"
        )
    with open(os.path.join(os.fspath(directory), f"{hdr.record_name}.hea"), "w") as f:
        f.write("\n".join(lines) + "\n")

    interleaved = np.ascontiguousarray(adc16.T).reshape(-1)
    with open(os.path.join(os.fspath(directory), dat_name), "wb") as f:
        f.write(interleaved.astype("<i2").tobytes())
    return [f"{hdr.record_name}.hea", dat_name]


def _fmt_fs(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def parse_annotations(
    raw: bytes,
    strict: bool = False,
    symbol_table: dict[int, str] | None = None,
) -> AnnotationSet:
    """Decode a MIT-format annotation byte stream.

    Each annotation is a little-endian 16-bit word: high 6 bits are the
    type code, low 10 bits the sample increment.  SKIP(59) is followed by
    a 4-byte long increment (high word first, each little-endian);
    NUM/SUB/CHN modify the current annotation; AUX(63) carries a
    length-prefixed byte string padded to even length.  A zero word
    terminates the stream.

    Unknown codes raise :class:`UnknownCode` in strict mode and map to
    ``'?'`` otherwise.
    """
    table = DEFAULT_SYMBOL_TABLE if symbol_table is None else symbol_table
    if len(raw) % 2:
        raise TruncatedData("annotation stream has odd byte length")
    words = np.frombuffer(raw, dtype="<u2")

    entries: list[AnnotationEntry] = []
    ts = 0
    chan = 0
    num = 0
    i = 0
    n = len(words)
    terminated = False
    while i < n:
        w = int(words[i])
        code, dt = w >> 10, w & 0x3FF
        if code == 0 and dt == 0:
            terminated = True
            break
        if code == _SKIP:
            if i + 2 >= n:
                raise TruncatedData("SKIP needs a 4-byte increment")
            hi, lo = int(words[i + 1]), int(words[i + 2])
            ts += (hi << 16) | lo
            i += 3
            if i >= n:
                raise TruncatedData("SKIP not followed by an annotation")
            w = int(words[i])
            code, dt = w >> 10, w & 0x3FF
            if code == 0 and dt == 0:
                raise TruncatedData("SKIP followed by terminator")
        ts += dt
        i += 1

        if code in table:
            symbol = table[code]
        elif strict:
            raise UnknownCode(f"annotation code {code} not in symbol table")
        else:
            symbol = "?"
        aux: str | None = None

        # modifier words attached to this annotation
        while i < n:
            w = int(words[i])
            mcode, mval = w >> 10, w & 0x3FF
            if mcode < 60:
                break
            if mcode == _NUM:
                num = mval
                i += 1
            elif mcode == _SUB:
                i += 1  # parsed for framing, not stored
            elif mcode == _CHN:
                chan = mval
                i += 1
            elif mcode == _AUX:
                length = mval
                start = 2 * i + 2
                padded = length + (length & 1)
                if start + padded > len(raw):
                    raise TruncatedData("AUX field runs past end of stream")
                aux = raw[start : start + length].decode("latin-1")
                i += 1 + padded // 2
        entries.append(AnnotationEntry(sample=ts, symbol=symbol, chan=chan, num=num, aux=aux))

    if not terminated:
        raise TruncatedData("annotation stream missing zero terminator")
    return AnnotationSet(entries=entries)
