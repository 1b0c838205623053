"""Optical perception and semantic node extraction.

Two providers share one surface: :class:`RemotePerceiver` talks to an
OpenAI-compatible endpoint with the bundled prompt templates, and
:class:`MockPerceiver` is a deterministic offline stand-in that reads the page
sidecar instead of the pixels.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .chat import ChatClient, ReplyParseError, image_part, parse_json_reply
from .pagebuilder import ScrapbookPage, decode_raster

logger = logging.getLogger(__name__)

NODE_CAP = 8
QUERY_CAP = 10
PATH_NODE_CAP = 10
VISUAL_MARK = "\n[VISUAL] "
EMPTY_PATH = "(empty)"
# Settle floating-point noise in 1 - legibility (e.g. 1 - 0.4 * 0.6).
_EPS = 1e-9


class PerceptionError(RuntimeError):
    pass


class NoExtractableNodes(ValueError):
    def __init__(self) -> None:
        super().__init__("no extractable nodes")


@dataclass(frozen=True)
class PerceptionResult:
    ocr_text: str
    visual_summary: str
    salient_items: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        sal = [s for _, s in self.salient_items]
        if any(b > a for a, b in zip(sal, sal[1:])):
            raise ValueError("salient_items must be sorted by non-increasing salience")
        if any(not p or p != p.lower() for p, _ in self.salient_items):
            raise ValueError("salient phrases must be nonempty and lowercase")
        if any(not 0.0 <= s <= 1.0 for s in sal):
            raise ValueError("salience must lie in [0, 1]")

    @property
    def phrases(self) -> List[str]:
        return [p for p, _ in self.salient_items]

    def to_json(self) -> dict:
        return {
            "ocr_text": self.ocr_text,
            "visual_summary": self.visual_summary,
            "salient_items": [[p, s] for p, s in self.salient_items],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "PerceptionResult":
        return cls(data["ocr_text"], data["visual_summary"], tuple((str(p), float(s)) for p, s in data["salient_items"]))


@dataclass(frozen=True)
class FusedText:
    text: str


@dataclass(frozen=True)
class PathSummary:
    semantic_nodes: Tuple[Tuple[str, float], ...]
    em_path: str

    @property
    def phrases(self) -> List[str]:
        return [p for p, _ in self.semantic_nodes]


def fuse_text(ocr: str, visual_summary: str) -> FusedText:
    if not visual_summary:
        return FusedText(ocr)
    return FusedText(ocr + VISUAL_MARK + visual_summary)


def rank_salience(rank: int, count: int) -> float:
    """Salience of the phrase at 1-based ``rank`` among ``count`` phrases."""
    return 1.0 - rank / (count + 1)


def survives(salience: float, legibility: float) -> bool:
    return salience >= 1.0 - legibility - _EPS


def load_prompt(name: str) -> str:
    return resources.files("scrapmem").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def fill(template: str, **values: str) -> str:
    # Templates contain literal JSON braces, so str.format is unusable.
    for key, value in values.items():
        template = template.replace("{" + key + "}", value)
    return template


# ---------------------------------------------------------------------------
# Deterministic tokenizer used by the mock provider
# ---------------------------------------------------------------------------

_MONTHS = {
    "january": 1, "february": 2, "march": 3, "april": 4, "may": 5, "june": 6,
    "july": 7, "august": 8, "september": 9, "october": 10, "november": 11, "december": 12,
}
_MONTH_ABBR = {name[:3]: name for name in _MONTHS}
_MONTH_ABBR["sept"] = "september"
_MONTH_RE = r"(?:Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?)"
_ISO_DATE = re.compile(r"(?<![\d-])(\d{4})[-/.](\d{1,2})[-/.](\d{1,2})(?![\d-])")
_MONTH_DAY = re.compile(rf"\b({_MONTH_RE})\.?\s+(\d{{1,2}})(?:st|nd|rd|th)?(?!\d)(?:,?\s+\d{{4}}\b)?", re.IGNORECASE)
_DAY_MONTH = re.compile(rf"\b(\d{{1,2}})(?:st|nd|rd|th)?\s+({_MONTH_RE})\b\.?(?:,?\s+\d{{4}}\b)?", re.IGNORECASE)

_CURRENCY_SYMBOLS = {"$": "usd", "€": "eur", "£": "gbp", "¥": "jpy"}
_UNITS = (
    "eur|euro|euros|usd|dollar|dollars|gbp|pound|pounds|chf|jpy|yen|cny|rmb|yuan|cad|aud|sek|nok|dkk|inr|"
    "km|kms|mi|miles|mile|m|cm|mm|kg|kgs|g|mg|lb|lbs|l|ml|gb|mb|tb|kb|kwh|w|kw|"
    "nights|night|days|day|weeks|week|months|month|years|year|hours|hour|hrs|hr|h|minutes|minute|mins|min|seconds|sec|s|"
    "people|persons|person|guests|guest|adults|adult|kids|children|tickets|ticket|items|item|pcs|pieces|bottles|"
    "rooms|room|bags|boxes|points|steps|%|percent"
)
_NUM = r"\d+(?:[.,]\d+)*"
_NUM_UNIT = re.compile(rf"(?<![\w.,])({_NUM})\s?({_UNITS})(?![\w])", re.IGNORECASE)
_CUR_PREFIX = re.compile(rf"([$€£¥])\s?({_NUM})(?![\w])")
_CAP_WORD = r"[A-Z][\w'&.-]*"
_CONNECT = r"(?:of|de|la|del|da|di|du|von|van|the|and|&)"
_CAP_SPAN = re.compile(rf"\b{_CAP_WORD}(?:[ \t]+(?:{_CONNECT}[ \t]+)*{_CAP_WORD})+")

STOP_WORDS = frozenset(
    """a about above after again against all am an and any are as at be because been before being below between both
    but by can could did do does doing done down during each few for from further get got had has have having he her
    here hers herself him himself his how i if in into is it its itself just let me more most my myself no nor not now
    of off on once only or other our ours ourselves out over own same she should so some such than that the their
    theirs them themselves then there these they this those through to too under until up very was we were what when
    where which while who whom why will with would you your yours yourself yourselves much many remember recall tell
    find show help please ever also one anything something thing things time times""".split()
)
_PRONOUNS = {"i", "you", "we", "they", "he", "she"}
_WORD = re.compile(r"[A-Za-z][A-Za-z0-9'-]*")


_IRREGULAR = {
    "be": "was", "buy": "bought", "do": "did", "drink": "drank", "drive": "drove", "eat": "ate", "get": "got",
    "give": "gave", "go": "went", "have": "had", "keep": "kept", "leave": "left", "make": "made", "meet": "met",
    "pay": "paid", "read": "read", "ride": "rode", "run": "ran", "say": "said", "see": "saw", "sell": "sold",
    "send": "sent", "spend": "spent", "stay": "stayed", "take": "took", "win": "won", "write": "wrote",
}


def _past_tense(verb: str) -> str:
    if verb in _IRREGULAR:
        return _IRREGULAR[verb]
    if verb.endswith("e"):
        return verb + "d"
    if len(verb) > 2 and verb.endswith("y") and verb[-2] not in "aeiou":
        return verb[:-1] + "ied"
    return verb + "ed"


def _norm_month(token: str) -> str:
    key = token.lower().rstrip(".")
    return key if key in _MONTHS else _MONTH_ABBR[key[:4] if key.startswith("sept") else key[:3]]


def _norm_number(num: str) -> str:
    return num.replace(",", "") if re.fullmatch(r"\d{1,3}(?:,\d{3})+(?:\.\d+)?", num) else num


def _unit(unit: str) -> str:
    return unit.lower()


def _scan(text: str) -> Tuple[List[Tuple[int, str]], List[Tuple[int, int]]]:
    """Return (start, phrase) hits and the spans they cover, in priority order."""
    hits: List[Tuple[int, str]] = []
    covered: List[Tuple[int, int]] = []

    def free(a: int, b: int) -> bool:
        return all(b <= s or a >= e for s, e in covered)

    def take(m: re.Match, phrase: str) -> None:
        if free(m.start(), m.end()):
            hits.append((m.start(), phrase))
            covered.append((m.start(), m.end()))

    for m in _ISO_DATE.finditer(text):
        y, mo, d = (int(g) for g in m.groups())
        if 1 <= mo <= 12 and 1 <= d <= 31:
            take(m, f"{y:04d}-{mo:02d}-{d:02d}")
    for m in _MONTH_DAY.finditer(text):
        if 1 <= int(m.group(2)) <= 31:
            take(m, f"{_norm_month(m.group(1))} {int(m.group(2))}")
    for m in _DAY_MONTH.finditer(text):
        if 1 <= int(m.group(1)) <= 31:
            take(m, f"{_norm_month(m.group(2))} {int(m.group(1))}")
    for m in _CUR_PREFIX.finditer(text):
        take(m, f"{_norm_number(m.group(2))} {_CURRENCY_SYMBOLS[m.group(1)]}")
    for m in _NUM_UNIT.finditer(text):
        take(m, f"{_norm_number(m.group(1))} {_unit(m.group(2))}")
    masked = list(text)
    for s, e in covered:
        masked[s:e] = "\x00" * (e - s)
    for m in _CAP_SPAN.finditer("".join(masked)):
        take(m, " ".join(m.group(0).split()).lower())
    return hits, covered


def _ordered_unique(hits: Sequence[Tuple[int, str]], cap: Optional[int]) -> List[str]:
    out: List[str] = []
    for _, phrase in sorted(hits, key=lambda h: h[0]):
        if phrase not in out:
            out.append(phrase)
            if cap is not None and len(out) >= cap:
                break
    return out


def tokenize(text: str, cap: Optional[int] = NODE_CAP) -> List[str]:
    """Dates, numbers with units, and capitalized multi-word spans, by first occurrence."""
    hits, _ = _scan(text)
    return _ordered_unique(hits, cap)


def tokenize_query(question: str, cap: int = QUERY_CAP) -> List[str]:
    """:func:`tokenize` plus the remaining non-stop words of a question.

    A verb governed by ``did <pronoun>`` is put in the past tense so that
    "did I own" meets stored phrasing such as "owned".
    """
    hits, covered = _scan(question)
    words = list(_WORD.finditer(question))
    for i, m in enumerate(words):
        if any(not (m.end() <= s or m.start() >= e) for s, e in covered):
            continue
        word = m.group(0).lower().strip("'-")
        if i >= 2 and words[i - 2].group(0).lower() == "did" and words[i - 1].group(0).lower() in _PRONOUNS:
            word = _past_tense(word)
        if len(word) < 2 or word in STOP_WORDS:
            continue
        hits.append((m.start(), word))
    return _ordered_unique(hits, cap)


_UNIT_WORD = re.compile(rf"(?<![\w])({_UNITS})(?![\w])", re.IGNORECASE)


def numbers_with_units(text: str) -> List[str]:
    """Number-with-unit phrases of ``text`` in order of appearance."""
    hits: List[Tuple[int, str]] = []
    for m in _CUR_PREFIX.finditer(text):
        hits.append((m.start(), f"{_norm_number(m.group(2))} {_CURRENCY_SYMBOLS[m.group(1)]}"))
    for m in _NUM_UNIT.finditer(text):
        hits.append((m.start(), f"{_norm_number(m.group(1))} {_unit(m.group(2))}"))
    return _ordered_unique(hits, None)


def unit_words(text: str) -> set:
    return {m.group(1).lower() for m in _UNIT_WORD.finditer(text)}


def rank_phrases(phrases: Sequence[str]) -> Tuple[Tuple[str, float], ...]:
    return tuple((p, rank_salience(r, len(phrases))) for r, p in enumerate(phrases, start=1))


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------


class MockPerceiver:
    mode = "mock"

    def perceive_page(self, page: ScrapbookPage) -> PerceptionResult:
        if not page.source_ids:
            raise PerceptionError(f"{page.page_id}: missing sidecar")
        decode_raster(page.raster)
        ocr = "\n".join(page.texts[i] for i in page.source_ids if i in page.texts)
        visual = "; ".join(page.captions[i] for i in page.source_ids if i in page.captions)
        ranked = rank_phrases(tokenize(fuse_text(ocr, visual).text, cap=None))
        ell = page.fidelity.legibility
        return PerceptionResult(ocr, visual, tuple((p, s) for p, s in ranked if survives(s, ell)))

    def extract_nodes(self, fused: FusedText, context: Optional[Mapping[str, str]] = None) -> List[str]:
        return tokenize(fused.text, cap=NODE_CAP)

    def extract_query_nodes(self, question: str) -> List[str]:
        if not question.strip():
            raise ValueError("question must be nonempty")
        phrases = tokenize_query(question)
        if not phrases:
            raise NoExtractableNodes()
        return phrases

    def summarize_path(self, perception: PerceptionResult, day: date) -> PathSummary:
        nodes = perception.salient_items[:PATH_NODE_CAP]
        chain = " -> ".join(p for p, _ in nodes) if nodes else EMPTY_PATH
        return PathSummary(tuple(nodes), f"{day.isoformat()} : {chain}")


def _phrase_list(value: object, where: str) -> List[str]:
    if not isinstance(value, list):
        raise ReplyParseError(f"{where}: semantic_nodes is not a list")
    out: List[str] = []
    for entry in value:
        if not isinstance(entry, str):
            raise ReplyParseError(f"{where}: non-string node {entry!r}")
        phrase = " ".join(entry.split()).lower()
        if phrase and phrase not in out:
            out.append(phrase)
    return out


def _salient_from_reply(value: object) -> Tuple[Tuple[str, float], ...]:
    if not isinstance(value, list):
        raise ReplyParseError("salient_items is not a list")
    phrases: List[str] = []
    scores: Dict[str, Optional[float]] = {}
    for entry in value:
        if isinstance(entry, str):
            phrase, score = entry, None
        elif isinstance(entry, dict):
            phrase = entry.get("phrase") or entry.get("item") or entry.get("text") or ""
            raw = entry.get("salience", entry.get("score"))
            score = None if raw is None else min(1.0, max(0.0, float(raw)))
        else:
            raise ReplyParseError(f"unsupported salient item {entry!r}")
        phrase = " ".join(str(phrase).split()).lower()
        if phrase and phrase not in scores:
            phrases.append(phrase)
            scores[phrase] = score
    ranked = dict(rank_phrases(phrases))
    items = [(p, scores[p] if scores[p] is not None else ranked[p]) for p in phrases]
    items.sort(key=lambda it: -it[1])
    return tuple(items)


@dataclass
class RemotePerceiver:
    client: ChatClient = field(default_factory=ChatClient)
    perception_max_tokens: int = 1024
    summary_max_tokens: int = 512
    mode = "remote"

    def perceive_page(self, page: ScrapbookPage) -> PerceptionResult:
        messages = [
            {"role": "system", "content": load_prompt("page_perception_system")},
            {"role": "user", "content": [image_part(page.raster)]},
        ]
        reply = self.client.complete(messages, max_tokens=self.perception_max_tokens, temperature=0.0)
        obj = parse_json_reply(reply, ("ocr_text", "visual_summary", "salient_items"))
        return PerceptionResult(str(obj["ocr_text"]), str(obj["visual_summary"]), _salient_from_reply(obj["salient_items"]))

    def extract_nodes(self, fused: FusedText, context: Optional[Mapping[str, str]] = None) -> List[str]:
        context = dict(context or {})
        day = context.pop("date", "")
        lines = [f"{key.capitalize()}: {value}" for key, value in context.items()]
        body = "\n".join(lines + [f"Detail: {fused.text}"])
        messages = [
            {"role": "system", "content": load_prompt("node_extraction_system")},
            {"role": "user", "content": fill(load_prompt("node_extraction_user"), date=day, perception_text=body)},
        ]
        reply = self.client.complete(messages, max_tokens=256, temperature=0.0)
        phrases = _phrase_list(parse_json_reply(reply, ("semantic_nodes",))["semantic_nodes"], "extract_nodes")
        if len(phrases) < 3:
            logger.warning("node extraction returned %d phrases (< 3)", len(phrases))
        return phrases[:NODE_CAP]

    def extract_query_nodes(self, question: str) -> List[str]:
        if not question.strip():
            raise ValueError("question must be nonempty")
        messages = [
            {"role": "system", "content": load_prompt("query_extraction_system")},
            {"role": "user", "content": fill(load_prompt("query_extraction_user"), question=question)},
        ]
        reply = self.client.complete(messages, max_tokens=200, temperature=0.0, timeout=30.0)
        phrases = _phrase_list(parse_json_reply(reply, ("semantic_nodes",))["semantic_nodes"], "extract_query_nodes")
        if not phrases:
            raise NoExtractableNodes()
        if len(phrases) < 3:
            logger.warning("query extraction returned %d phrases (< 3)", len(phrases))
        return phrases[:QUERY_CAP]

    def summarize_path(self, perception: PerceptionResult, day: date) -> PathSummary:
        text = fuse_text(perception.ocr_text, perception.visual_summary).text
        if perception.salient_items:
            text += "\nSalient items: " + ", ".join(perception.phrases)
        messages = [
            {"role": "system", "content": load_prompt("path_summary_system")},
            {"role": "user", "content": fill(load_prompt("path_summary_user"), date=day.isoformat(), perception_text=text)},
        ]
        reply = self.client.complete(messages, max_tokens=self.summary_max_tokens, temperature=0.0)
        obj = parse_json_reply(reply, ("semantic_nodes", "em_path"))
        phrases = _phrase_list(obj["semantic_nodes"], "summarize_path")[:PATH_NODE_CAP]
        known = dict(perception.salient_items)
        ranked = dict(rank_phrases(phrases))
        nodes = tuple((p, known.get(p, ranked[p])) for p in phrases)
        return PathSummary(nodes, str(obj["em_path"]).strip())
