"""Conversation transcripts: types, parsing, annotation and synthesis.

A corpus is line-delimited JSON, one conversation per line:

    {"id": "...", "score": 5, "responses": [
        {"speaker": "I", "text": "..."},
        {"speaker": "C", "text": "...",
         "spo": [[[0, 1], [1, 2], [2, 3]]],
         "links": [[0, 1, "QAP"]]}]}

Spans are half-open [start, end) token indices into the owning response's
token list. Each response's "links" lists outgoing discourse links whose
source index must equal that response's position.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ValidationError

FILLED_PAUSES = ("uh", "um", "er", "mm")

DISCOURSE_RELATIONS = (
    "QAP", "Continuation", "Elaboration", "Acknowledgement", "Clarification-Q",
    "Comment", "Contrast", "Correction", "Explanation", "Narration",
    "Parallel", "Q-Elab", "Result", "Alternation", "Background", "Conditional",
)

STOPWORDS = frozenset("""
a an the and or but if then than so to of in on at by for with from as is are
was were am be been being do does did have has had will would can could this
that these those it its i you he she we they me him her us them my your his
their our what which who when where how why not no yes
""".split())

VERB_LIST = frozenset("""
like likes liked love loves loved want wants wanted think thinks thought know
knows knew go goes went see sees saw make makes made eat eats ate play plays
played say says said take takes took get gets got give gives gave read reads
visit visits visited watch watches watched study studies studied enjoy enjoys
enjoyed is are was were am have has had
""".split())

DEFAULT_CEFR_MAP = {1: "A1", 2: "A1", 3: "A2", 4: "A2", 5: "B1",
                    6: "B1", 7: "B2", 8: "B2", 9: "C1"}

_TOKEN_RUN = re.compile(r"[0-9a-z]+|[^0-9a-z\s]+")


Span = tuple[int, int]


@dataclass
class SpoTriplet:
    subject: Span
    predicate: Span
    object: Span

    def spans(self) -> tuple[Span, Span, Span]:
        return (self.subject, self.predicate, self.object)


@dataclass
class DiscourseLink:
    source: int
    target: int
    relation: str


@dataclass
class Response:
    speaker: str                      # "I" interlocutor, "C" candidate
    text: str
    tokens: list[str] = field(default_factory=list)
    spo: list[SpoTriplet] | None = None       # None = not annotated yet
    out_links: list[DiscourseLink] | None = None

    def __post_init__(self):
        if not self.tokens:
            self.tokens = tokenize(self.text)


@dataclass
class Conversation:
    conv_id: str
    score: int
    responses: list[Response]
    split_tag: str = "train"

    def all_links(self) -> list[DiscourseLink]:
        links = []
        for resp in self.responses:
            if resp.out_links:
                links.extend(resp.out_links)
        return links

    def candidate_tokens(self) -> list[str]:
        out = []
        for resp in self.responses:
            if resp.speaker == "C":
                out.extend(resp.tokens)
        return out


def tokenize(text: str, filled_pauses=FILLED_PAUSES) -> list[str]:
    """Lowercase and split on whitespace and punctuation boundaries.

    A whitespace-delimited chunk that is itself a filled pause survives as
    one token even if it contains punctuation. Contiguous punctuation runs
    stay single tokens, so the output re-tokenizes to itself.
    """
    filled = set(filled_pauses)
    tokens: list[str] = []
    for chunk in text.lower().split():
        if chunk in filled:
            tokens.append(chunk)
        else:
            tokens.extend(_TOKEN_RUN.findall(chunk))
    return tokens


def _parse_span(raw, n_tokens: int, line: int, what: str) -> Span:
    if (not isinstance(raw, (list, tuple)) or len(raw) != 2
            or not all(isinstance(v, int) for v in raw)):
        raise ValidationError(f"{what} span must be [start, end]", line)
    start, end = raw
    if not (0 <= start < end <= n_tokens):
        raise ValidationError(
            f"{what} span [{start}, {end}) out of bounds for {n_tokens} tokens", line)
    return (start, end)


def _parse_response(raw, index: int, n_responses: int, line: int) -> Response:
    if not isinstance(raw, dict):
        raise ValidationError(f"response {index} must be an object", line)
    speaker = raw.get("speaker")
    if speaker not in ("I", "C"):
        raise ValidationError(f"response {index}: speaker must be 'I' or 'C'", line)
    text = raw.get("text")
    if not isinstance(text, str):
        raise ValidationError(f"response {index}: text must be a string", line)
    resp = Response(speaker=speaker, text=text)
    n_tokens = len(resp.tokens)
    if n_tokens == 0:
        raise ValidationError(f"response {index}: text has no tokens", line)

    if "spo" in raw and raw["spo"] is not None:
        triplets = []
        if not isinstance(raw["spo"], list):
            raise ValidationError(f"response {index}: spo must be a list", line)
        for t_idx, trip in enumerate(raw["spo"]):
            if not isinstance(trip, (list, tuple)) or len(trip) != 3:
                raise ValidationError(
                    f"response {index}: spo entry {t_idx} must have 3 spans", line)
            s, p, o = (
                _parse_span(trip[k], n_tokens, line,
                            f"response {index} spo {t_idx} {name}")
                for k, name in ((0, "subject"), (1, "predicate"), (2, "object")))
            triplets.append(SpoTriplet(s, p, o))
        resp.spo = triplets

    if "links" in raw and raw["links"] is not None:
        links = []
        if not isinstance(raw["links"], list):
            raise ValidationError(f"response {index}: links must be a list", line)
        for l_idx, lk in enumerate(raw["links"]):
            if (not isinstance(lk, (list, tuple)) or len(lk) != 3
                    or not isinstance(lk[0], int) or not isinstance(lk[1], int)
                    or not isinstance(lk[2], str)):
                raise ValidationError(
                    f"response {index}: link {l_idx} must be [src, dst, relation]", line)
            src, dst, rel = lk
            if src != index:
                raise ValidationError(
                    f"response {index}: link {l_idx} source {src} must equal "
                    f"the response index", line)
            if not (0 <= dst < n_responses):
                raise ValidationError(
                    f"response {index}: link {l_idx} target {dst} out of range", line)
            if dst == src:
                raise ValidationError(
                    f"response {index}: link {l_idx} is a self-link", line)
            links.append(DiscourseLink(src, dst, rel))
        resp.out_links = links
    return resp


def parse_corpus(lines, relation_vocab=DISCOURSE_RELATIONS) -> list[Conversation]:
    """Parse line-delimited conversation records, preserving order.

    ``lines`` is one blob or any iterable of strings. Raises
    ValidationError with the 1-based line number on the first malformed
    record.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    relations = set(relation_vocab)
    convs: list[Conversation] = []
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"not valid JSON: {exc.msg}", line_no) from None
        if not isinstance(raw, dict):
            raise ValidationError("record must be a JSON object", line_no)
        conv_id = raw.get("id")
        if not isinstance(conv_id, str) or not conv_id:
            raise ValidationError("id must be a non-empty string", line_no)
        score = raw.get("score")
        if not isinstance(score, int) or isinstance(score, bool) or not 1 <= score <= 9:
            raise ValidationError("score must be an integer in [1, 9]", line_no)
        raw_resps = raw.get("responses")
        if not isinstance(raw_resps, list) or not raw_resps:
            raise ValidationError("responses must be a non-empty list", line_no)
        responses = [
            _parse_response(r, i, len(raw_resps), line_no)
            for i, r in enumerate(raw_resps)
        ]
        for resp in responses:
            for lk in resp.out_links or ():
                if lk.relation not in relations:
                    raise ValidationError(
                        f"unknown discourse relation {lk.relation!r}", line_no)
        convs.append(Conversation(conv_id, score, responses))
    return convs


def conversation_to_record(conv: Conversation) -> dict:
    resps = []
    for resp in conv.responses:
        entry: dict = {"speaker": resp.speaker, "text": resp.text}
        if resp.spo is not None:
            entry["spo"] = [[list(t.subject), list(t.predicate), list(t.object)]
                            for t in resp.spo]
        if resp.out_links is not None:
            entry["links"] = [[lk.source, lk.target, lk.relation]
                              for lk in resp.out_links]
        resps.append(entry)
    return {"id": conv.conv_id, "score": conv.score, "responses": resps}


def serialize_corpus(convs) -> str:
    return "".join(json.dumps(conversation_to_record(c)) + "\n" for c in convs)


def load_corpus(path, relation_vocab=DISCOURSE_RELATIONS) -> list[Conversation]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_corpus(fh, relation_vocab)


def save_corpus(convs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_corpus(convs))


def extract_spo_naive(tokens, verb_list=VERB_LIST, stopwords=STOPWORDS,
                      filled_pauses=FILLED_PAUSES) -> list[SpoTriplet]:
    """Rule-of-thumb subject/predicate/object spans from a token list.

    For each verb-list match: the nearest preceding pronoun or content
    token is the subject, the verb is the predicate, and the first content
    token after the verb is the object. Verbs with no such neighbours
    yield nothing.
    """
    pronouns = {"i", "you", "he", "she", "it", "we", "they"}
    filled = set(filled_pauses)

    def is_content(tok: str) -> bool:
        return tok.isalnum() and tok not in stopwords and tok not in filled

    triplets = []
    for v, tok in enumerate(tokens):
        if tok not in verb_list:
            continue
        subject = None
        for s in range(v - 1, -1, -1):
            if tokens[s] in pronouns or is_content(tokens[s]):
                subject = s
                break
        obj = None
        for o in range(v + 1, len(tokens)):
            if is_content(tokens[o]):
                obj = o
                break
        if subject is not None and obj is not None:
            triplets.append(SpoTriplet((subject, subject + 1), (v, v + 1),
                                       (obj, obj + 1)))
    return triplets


def infer_links_fallback(conv: Conversation) -> list[DiscourseLink]:
    """Chain each response to the next; interlocutor->candidate pairs are QAP."""
    links = []
    for i in range(len(conv.responses) - 1):
        if conv.responses[i].speaker == "I" and conv.responses[i + 1].speaker == "C":
            rel = "QAP"
        else:
            rel = "Continuation"
        links.append(DiscourseLink(i, i + 1, rel))
    return links


def ensure_annotations(conv: Conversation, spo_speakers: str = "both",
                       verb_list=VERB_LIST) -> Conversation:
    """Fill missing SPO and link annotations in place; existing ones win."""
    for resp in conv.responses:
        if resp.spo is None:
            if spo_speakers == "both" or resp.speaker == "C":
                resp.spo = extract_spo_naive(resp.tokens, verb_list)
            else:
                resp.spo = []
    if not conv.all_links():
        by_source: dict[int, list[DiscourseLink]] = {}
        for lk in infer_links_fallback(conv):
            by_source.setdefault(lk.source, []).append(lk)
        for i, resp in enumerate(conv.responses):
            if resp.out_links is None or not resp.out_links:
                resp.out_links = by_source.get(i, [])
    return conv


@dataclass
class SynthConfig:
    n_conversations: int = 200
    responses_per_conv: tuple[int, int] = (8, 8)
    tokens_per_response: tuple[int, int] = (10, 10)
    vocab_size: int = 120
    diversity_weight: float = 3.0
    link_weight: float = 3.5
    noise_sigma: float = 0.5
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_conversations < 1:
            raise ConfigError("n_conversations must be positive")
        if self.vocab_size < 10:
            raise ConfigError("vocab_size must be at least 10")
        lo, hi = self.responses_per_conv
        if not (2 <= lo <= hi):
            raise ConfigError("responses_per_conv range must satisfy 2 <= lo <= hi")
        t_lo, t_hi = self.tokens_per_response
        if not (1 <= t_lo <= t_hi):
            raise ConfigError("tokens_per_response range must satisfy 1 <= lo <= hi")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")


_SYLLABLES = ("ba", "do", "ki", "lu", "mo", "na", "pe", "ri", "sa", "tu",
              "ve", "wo", "za", "chi", "fen", "gar", "hul", "jim", "kor", "lep")

_INTERLOCUTOR_OPENERS = (
    "what do you think about it ?",
    "can you tell me more ?",
    "how was that for you ?",
    "why do you say so ?",
    "and then what happened ?",
)


def synth_vocab_word(i: int) -> str:
    a = _SYLLABLES[i % len(_SYLLABLES)]
    b = _SYLLABLES[(i // len(_SYLLABLES)) % len(_SYLLABLES)]
    return f"{a}{b}{i % 10}"


def synth_score_signal(conv: Conversation, diversity_weight: float,
                       link_weight: float) -> tuple[float, float, float]:
    """(lexical_diversity, link_density, noiseless raw score) for a conversation."""
    cand = conv.candidate_tokens()
    diversity = len(set(cand)) / len(cand) if cand else 0.0
    density = len(conv.all_links()) / len(conv.responses)
    return diversity, density, diversity_weight * diversity + link_weight * density


def synth_generate(config: SynthConfig) -> list[Conversation]:
    """Deterministic synthetic conversations whose score follows a known rule.

    Candidate lexical diversity and discourse-link density are drawn per
    conversation and the score is
    clamp(round(w_d * diversity + w_l * density + noise), 1, 9).
    """
    config.validate()
    rng = np.random.default_rng(config.rng_seed)
    vocab = [synth_vocab_word(i) for i in range(config.vocab_size)]
    extra_relations = ("Elaboration", "Comment", "Result", "Explanation",
                       "Background", "Narration")
    convs = []
    for k in range(config.n_conversations):
        lo, hi = config.responses_per_conv
        n_resp = int(rng.integers(lo, hi + 1))
        # Strict alternation keeps the candidate-turn count pinned by
        # n_resp, so the per-conversation token total only depends on the
        # config and the diversity target stays recoverable from counts.
        speakers = ["I" if i % 2 == 0 else "C" for i in range(n_resp)]
        cand_idx = [i for i, s in enumerate(speakers) if s == "C"]

        t_lo, t_hi = config.tokens_per_response
        lengths = [int(rng.integers(t_lo, t_hi + 1)) for _ in cand_idx]
        total = sum(lengths)
        target_div = float(rng.uniform(0.3, 0.95))
        n_types = min(len(vocab), max(1, round(target_div * total)))
        types = [vocab[j] for j in rng.choice(config.vocab_size, size=n_types,
                                              replace=False)]
        bag = list(types)
        while len(bag) < total:
            bag.append(types[int(rng.integers(0, n_types))])
        order = rng.permutation(total)
        bag = [bag[j] for j in order]

        responses = []
        cursor = 0
        cand_pos = 0
        inter_pos = 0
        for i, speaker in enumerate(speakers):
            if speaker == "I":
                # Cycle rather than sample so the interlocutor's word-type
                # set is a function of the turn count alone.
                text = _INTERLOCUTOR_OPENERS[inter_pos % len(_INTERLOCUTOR_OPENERS)]
                inter_pos += 1
                responses.append(Response(speaker="I", text=text))
            else:
                n_tok = lengths[cand_pos]
                toks = bag[cursor:cursor + n_tok]
                cursor += n_tok
                cand_pos += 1
                resp = Response(speaker="C", text=" ".join(toks))
                if len(resp.tokens) >= 3 and rng.random() < 0.7:
                    start = int(rng.integers(0, len(resp.tokens) - 2))
                    resp.spo = [SpoTriplet((start, start + 1), (start + 1, start + 2),
                                           (start + 2, start + 3))]
                responses.append(resp)

        target_density = float(rng.uniform(0.2, 1.8))
        n_links = int(np.clip(round(target_density * n_resp), 0, 2 * n_resp))
        links: list[DiscourseLink] = []
        for i in range(min(n_links, n_resp - 1)):
            rel = "QAP" if speakers[i] == "I" and speakers[i + 1] == "C" else "Continuation"
            links.append(DiscourseLink(i, i + 1, rel))
        while len(links) < n_links:
            src = int(rng.integers(0, n_resp - 1))
            dst = int(rng.integers(src + 1, n_resp))
            rel = extra_relations[int(rng.integers(0, len(extra_relations)))]
            links.append(DiscourseLink(src, dst, rel))
        for lk in links:
            resp = responses[lk.source]
            if resp.out_links is None:
                resp.out_links = []
            resp.out_links.append(lk)
        for resp in responses:
            if resp.out_links is None:
                resp.out_links = []

        conv = Conversation(f"synth-{k:05d}", 1, responses)
        diversity, density, raw = synth_score_signal(
            conv, config.diversity_weight, config.link_weight)
        noise = float(rng.normal(0.0, config.noise_sigma)) if config.noise_sigma > 0 else 0.0
        conv.score = int(np.clip(round(raw + noise), 1, 9))
        convs.append(conv)
    return convs


def _largest_remainder(n: int, ratios) -> list[int]:
    exact = [n * r for r in ratios]
    sizes = [int(np.floor(e)) for e in exact]
    short = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def split_dataset(convs, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Score-stratified train/dev/test split with largest-remainder sizing.

    Global split sizes follow largest-remainder rounding of ``ratios``.
    Conversations are grouped by score, each group is shuffled with the
    seeded generator and split proportionally; any rounding drift is then
    settled by moving items from over-full to under-full splits.
    """
    if any(r < 0 for r in ratios):
        raise ConfigError("split ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    n = len(convs)
    targets = _largest_remainder(n, ratios)
    rng = np.random.default_rng(seed)

    groups: dict[int, list[Conversation]] = {}
    for conv in convs:
        groups.setdefault(conv.score, []).append(conv)

    splits: list[list[Conversation]] = [[], [], []]
    for score in sorted(groups):
        members = groups[score]
        members = [members[i] for i in rng.permutation(len(members))]
        sizes = _largest_remainder(len(members), ratios)
        at = 0
        for part, k in enumerate(sizes):
            splits[part].extend(members[at:at + k])
            at += k

    # Settle per-group rounding so the global sizes match the targets.
    # Donate from the score group most over its proportional share in the
    # over-full split, so no group gets drained below its share.
    for _ in range(n):
        over = next((i for i in range(3) if len(splits[i]) > targets[i]), None)
        under = next((i for i in range(3) if len(splits[i]) < targets[i]), None)
        if over is None or under is None:
            break
        counts = {s: 0 for s in groups}
        for conv in splits[over]:
            counts[conv.score] += 1
        excess = {s: counts[s] - ratios[over] * len(groups[s]) for s in groups}
        donor = max(range(len(splits[over])),
                    key=lambda i: (excess[splits[over][i].score], i))
        splits[under].append(splits[over].pop(donor))

    for tag, part in zip(("train", "dev", "test"), splits):
        for conv in part:
            conv.split_tag = tag
    return tuple(splits)
