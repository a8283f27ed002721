"""Timestamped event records shared by synthesis, detection, and scoring."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Annotation:
    """A reference event.  Band indices are inclusive mel-band bounds, if known."""

    class_label: str
    onset: float
    offset: float
    band_lo: int | None = None
    band_hi: int | None = None

    def __post_init__(self):
        if not self.onset < self.offset:
            raise ValueError(f"annotation needs onset < offset, got {self.onset}, {self.offset}")
        if self.onset < 0:
            raise ValueError(f"annotation onset {self.onset} is negative")

    @property
    def duration(self):
        return self.offset - self.onset

    def to_row(self, file):
        row = {
            "file": file,
            "class": self.class_label,
            "onset": round(self.onset, 6),
            "offset": round(self.offset, 6),
        }
        if self.band_lo is not None:
            row["band_lo"] = int(self.band_lo)
            row["band_hi"] = int(self.band_hi)
        return row

    @classmethod
    def from_row(cls, row):
        lo, hi = row.get("band_lo"), row.get("band_hi")
        return cls(
            str(row["class"]),
            float(row["onset"]),
            float(row["offset"]),
            None if lo is None else int(lo),
            None if hi is None else int(hi),
        )


@dataclass(frozen=True)
class EventDetection:
    """A detected event: time extent in seconds, inclusive mel-band extent, confidence."""

    class_label: str
    onset: float
    offset: float
    band_lo: int
    band_hi: int
    confidence: float

    @property
    def duration(self):
        return self.offset - self.onset

    def to_row(self, file):
        return {
            "file": file,
            "class": self.class_label,
            "onset": round(self.onset, 6),
            "offset": round(self.offset, 6),
            "band_lo": int(self.band_lo),
            "band_hi": int(self.band_hi),
            "score": round(float(self.confidence), 6),
        }

    @classmethod
    def from_row(cls, row):
        return cls(
            str(row["class"]),
            float(row["onset"]),
            float(row["offset"]),
            int(row.get("band_lo", 0)),
            int(row.get("band_hi", 0)),
            float(row.get("score", 1.0)),
        )


def group_by_file(rows, factory):
    """Map file name -> list of records built with ``factory(row)``, in file order."""
    out = {}
    for row in rows:
        out.setdefault(str(row["file"]), []).append(factory(row))
    return out
