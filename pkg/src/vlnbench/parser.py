"""Rule-based extraction of navigation actions from model text.

Stage one finds the first ``Action`` declaration and reads its value from
a bounded window after the marker, tolerating markdown decoration. Stage
two (reflection variants only) lifts Reflection / Final Decision blocks
out as metadata; it never changes the action token.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

from .errors import InvalidAction, NoActionFound
from .observation import Observation

WINDOW = 64
DIRECTIONS = ("Left", "Front", "Right", "Back")
STOP = "Stop"

ActionToken = Union[int, str]

# reasoning/reflection prose may mention "action"; mask closed blocks before stage one
_BLOCKS = re.compile(r"<\s*(reasoning|reflection)\s*>.*?<\s*/\s*\1\s*>", re.I | re.S)
_MARKER = re.compile(r"(?<![a-z])action(?![a-z])", re.I)
_NOISE = " \t*_`#>~[](){}\"'|.•"
_DELIM = re.compile(r"\s*(?:[:=：]|->|=>|→|⟶|—|-(?=\s))")
_TOKEN = re.compile(r"\d+|[a-z]+", re.I)


@dataclass(frozen=True)
class ParseOutcome:
    action_token: ActionToken
    reflection_text: str | None = None
    decision_text: str | None = None
    diagnostics: tuple[str, ...] = ()

    @property
    def is_stop(self) -> bool:
        return self.action_token == STOP


@dataclass(frozen=True)
class Move:
    marker: int
    target: str


@dataclass(frozen=True)
class StopAction:
    pass


ExecutableAction = Union[Move, StopAction]


def _mask(text: str) -> str:
    return _BLOCKS.sub(lambda m: " " * len(m.group(0)), text)


def _window(text: str, start: int) -> str:
    """The declaration's value region: one line, at most WINDOW chars.

    The value may sit on the line after a bare "**Action**" heading, never
    further, and the region stops at the next action marker.
    """
    win = text[start : start + WINDOW]
    body = win.lstrip(" \t")
    if body.startswith("\n"):
        body = body[1:]
    line = body.split("\n", 1)[0]
    nxt = _MARKER.search(line)
    return line[: nxt.start()] if nxt else line


def _classify(word: str) -> ActionToken | None:
    if word.isdigit():
        return int(word)
    low = word.lower()
    if low == "stop":
        return STOP
    for d in DIRECTIONS:
        if low == d.lower():
            return d
    return None


def _read_value(text: str, pos: int, notes: list[str]) -> ActionToken | None:
    """Value of the declaration whose marker ends at ``pos``."""
    i = pos
    while i < len(text) and text[i] in _NOISE:
        i += 1
    m = _DELIM.match(text, i)
    delimited = m is not None
    win = _window(text, m.end() if m else i)
    tokens = _TOKEN.findall(win)
    if not tokens:
        return None
    first = _classify(tokens[0])
    if not delimited:
        # bare "action" in prose counts only when a value follows immediately
        if first is None:
            return None
        notes.append("no delimiter after action marker")
    if first == STOP:
        return STOP
    numbers = [int(t) for t in tokens if t.isdigit()]
    if numbers:
        if not isinstance(first, int):
            notes.append("numeric value preferred over leading word")
        return numbers[0]
    for t in tokens:
        c = _classify(t)
        if c is not None:
            if c != first:
                notes.append(f"value {t!r} found after leading noise")
            return c
    return None


def _extract_action(text: str) -> tuple[ActionToken, list[str]]:
    masked = _mask(text)
    notes: list[str] = []
    if masked != text:
        notes.append("reasoning/reflection blocks ignored for action search")
    for m in _MARKER.finditer(masked):
        value = _read_value(masked, m.end(), notes)
        if value is not None:
            return value, notes
    raise NoActionFound("no Action declaration with a readable value")


def parse_baseline(text: str) -> ParseOutcome:
    token, notes = _extract_action(text)
    return ParseOutcome(token, diagnostics=tuple(notes))


_REFLECTION_TAG = re.compile(r"<\s*reflection\s*>(.*?)(?:<\s*/\s*reflection\s*>|$)", re.I | re.S)
_REFLECTION_FIELD = re.compile(
    r"^[\s*_#>]*reflection[\s*_]*[:：][\s*_]*(.+?)(?=^[\s*_#>]*(?:final\s+decision|decision|action)\b|\Z)",
    re.I | re.S | re.M,
)
_DECISION_TAG = re.compile(r"<\s*final\s+decision\s*>(.*?)(?:<\s*/\s*final\s+decision\s*>|$)", re.I | re.S)
_DECISION_FIELD = re.compile(r"(?<![a-z])(?:final\s+)?decision[\s*_`]*[:：=][\s*_`]*([^\n]*)", re.I)
_KEEP_REVISE = re.compile(r"\b(keep|revise)\b", re.I)


def _normalize_decision(raw: str) -> str:
    m = _KEEP_REVISE.search(raw)
    return m.group(1).capitalize() if m else raw.strip()


def parse_reflection(text: str) -> ParseOutcome:
    token, notes = _extract_action(text)
    reflection = None
    m = _REFLECTION_TAG.search(text) or _REFLECTION_FIELD.search(text)
    if m:
        reflection = m.group(1).strip()
    decision = None
    m = _DECISION_TAG.search(text) or _DECISION_FIELD.search(text)
    if m:
        decision = _normalize_decision(m.group(1))
    return ParseOutcome(token, reflection, decision, tuple(notes))


def validate_action(outcome: ParseOutcome, obs: Observation) -> ExecutableAction:
    token = outcome.action_token
    if token == STOP:
        return StopAction()
    if isinstance(token, int):
        cand = obs.candidate(token)
        if cand is None:
            offered = ", ".join(str(c.marker) for c in obs.candidates) or "none"
            raise InvalidAction(InvalidAction.UNKNOWN_MARKER, f"marker {token} not among {offered}")
        return Move(cand.marker, cand.target)
    bucket = obs.in_bucket(token)
    if not bucket:
        raise InvalidAction(InvalidAction.EMPTY_BUCKET, f"no navigable option to the {token}")
    if len(bucket) > 1:
        markers = ", ".join(str(c.marker) for c in bucket)
        raise InvalidAction(InvalidAction.AMBIGUOUS_BUCKET, f"{token} holds markers {markers}; answer with one number")
    return Move(bucket[0].marker, bucket[0].target)
