"""Synthetic financial-news language for desk-scale experiments.

Sentiment is compositional: whether a sentence is positive depends on both
the direction word and the polarity of the figure it moves ("profit fell" is
negative, "costs fell" is positive). Neutral sentences mention the same
companies and figures without a direction. Company-to-sector and
company-to-city relations are fixed, so masked tokens are often predictable
from context.

A separate "general" register (weather, sport, travel) shares function words
and some verbs with the financial one and stands in for an out-of-domain
pre-training corpus.
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from .data import LABELS, LabeledSentence, RegressionExample

COMPANIES = (
    "acmecorp", "borealis", "cygnet", "dunmore", "elkstone", "fennick", "glanford", "harlow",
    "ivercrest", "jentree", "kestrel", "lumina", "marlowe", "norvane", "oakridge", "pellam",
    "quintara", "redwick", "solvane", "tarrow", "ulverton", "valemont", "westray", "yarrowby",
)
SECTORS = ("steel", "paper", "telecom", "retail", "shipping", "software", "mining", "banking")
CITIES = ("helsinki", "espoo", "tampere", "oulu", "turku", "vaasa", "lahti", "kuopio")
POSITIVE_FIGURES = ("profit", "revenue", "sales", "earnings", "orders", "margin")
NEGATIVE_FIGURES = ("loss", "costs", "debt", "expenses", "layoffs", "arrears")
# Frequencies fall off along each list so later synonyms are rare in small samples.
UP_WORDS = ("rose", "increased", "grew", "climbed", "jumped", "surged", "soared", "advanced")
DOWN_WORDS = ("fell", "decreased", "declined", "dropped", "slipped", "plunged", "tumbled", "sank")
# Trailing clauses that co-occur with the direction of a move, as in real reports.
UP_CUES = ("on strong demand", "driven by higher volumes", "beating expectations", "helped by new contracts")
DOWN_CUES = ("on weak demand", "amid lower volumes", "missing expectations", "hit by cancelled contracts")
CUE_SHARE = 0.5
QUARTERS = ("first", "second", "third", "fourth")
DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday")
NUMBERS = tuple(str(n) for n in (2, 3, 4, 5, 6, 7, 8, 9, 10, 12, 15, 20, 25, 30, 40))

GENERAL_SUBJECTS = ("the temperature", "the river", "the crowd", "the team", "the price of coffee", "the tide")
GENERAL_PLACES = ("the north", "the coast", "the valley", "the city centre", "the islands", "the mountains")
GENERAL_ACTIVITIES = ("hiking", "sailing", "skiing", "fishing", "cycling", "rowing")
GENERAL_WEATHER = ("rain", "snow", "wind", "fog", "sunshine", "frost")

LABEL_PROBS = (0.3, 0.2, 0.5)
# Share of directional sentences about a cost-like figure, where the usual
# reading of the direction word is inverted.
INVERTED_SHARE = 0.1


def sector_of(company: str) -> str:
    return SECTORS[COMPANIES.index(company) % len(SECTORS)]


def city_of(company: str) -> str:
    return CITIES[(COMPANIES.index(company) * 3) % len(CITIES)]


def _zipf_choice(rng: np.random.Generator, words: Sequence[str]) -> str:
    w = 1.0 / np.arange(1, len(words) + 1)
    return words[rng.choice(len(words), p=w / w.sum())]


def _pick(rng: np.random.Generator, words: Sequence[str]) -> str:
    return words[rng.integers(len(words))]


def _directional(rng, company, figure, direction, up: bool) -> str:
    q, n = _pick(rng, QUARTERS), _pick(rng, NUMBERS)
    cue = ""
    if rng.random() < CUE_SHARE:
        cue = " " + _pick(rng, UP_CUES if up else DOWN_CUES)
    templates = (
        f"{company} said its {figure} {direction} {n} percent in the {q} quarter{cue} .",
        f"in the {q} quarter , {figure} at {company} {direction} to eur {n} million{cue} .",
        f"{company} , the {sector_of(company)} group , reported that {figure} {direction} {n} percent{cue} .",
        f"{figure} of the {city_of(company)} based {company} {direction} by {n} percent year on year{cue} .",
    )
    return templates[rng.integers(len(templates))]


def _neutral(rng, company) -> str:
    q, n = _pick(rng, QUARTERS), _pick(rng, NUMBERS)
    figure = _pick(rng, POSITIVE_FIGURES + NEGATIVE_FIGURES)
    templates = (
        f"{company} is a {sector_of(company)} company based in {city_of(company)} .",
        f"{company} will publish its {q} quarter report on {_pick(rng, DAYS)} .",
        f"the annual general meeting of {company} will be held in {city_of(company)} on {_pick(rng, DAYS)} .",
        f"{company} said its {figure} was eur {n} million in the {q} quarter .",
        f"{company} , the {sector_of(company)} group , employs {n} hundred people in {city_of(company)} .",
    )
    return templates[rng.integers(len(templates))]


def sentiment_sentence(rng: np.random.Generator, label: str) -> str:
    company = _pick(rng, COMPANIES)
    if label == "neutral":
        return _neutral(rng, company)
    good_figure = rng.random() >= INVERTED_SHARE
    figure = _pick(rng, POSITIVE_FIGURES if good_figure else NEGATIVE_FIGURES)
    goes_up = good_figure == (label == "positive")
    direction = _zipf_choice(rng, UP_WORDS if goes_up else DOWN_WORDS)
    return _directional(rng, company, figure, direction, goes_up)


def sentiment_dataset(
    n: int,
    seed: int,
    label_noise: float = 0.0,
    label_probs: Sequence[float] = LABEL_PROBS,
) -> List[LabeledSentence]:
    """``n`` labeled sentences; ``label_noise`` of them get a different random label."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        label = LABELS[rng.choice(len(LABELS), p=label_probs)]
        text = sentiment_sentence(rng, label)
        if label_noise and rng.random() < label_noise:
            label = LABELS[(LABELS.index(label) + 1 + rng.integers(len(LABELS) - 1)) % len(LABELS)]
        out.append(LabeledSentence(text, label, agreement=100 if rng.random() < 0.5 else 75))
    return out


def regression_dataset(n: int, seed: int, noise: float = 0.05) -> List[RegressionExample]:
    """Scores in [-1, 1]: sign from the sentiment rule, magnitude from the reported percentage."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        label = LABELS[rng.choice(len(LABELS), p=LABEL_PROBS)]
        text = sentiment_sentence(rng, label)
        sign = {"positive": 1.0, "negative": -1.0, "neutral": 0.0}[label]
        digits = [int(t) for t in text.split() if t.isdigit()]
        magnitude = 0.3 + 0.6 * min(digits[0], 40) / 40 if digits else 0.5
        score = float(np.clip(sign * magnitude + rng.normal(0, noise), -1, 1))
        company = next(c for c in COMPANIES if c in text.split())
        out.append(RegressionExample(text, round(score, 4), company))
    return out


def financial_corpus(n: int, seed: int) -> List[str]:
    """Unlabeled in-domain sentences from the same grammar."""
    rng = np.random.default_rng(seed)
    return [sentiment_sentence(rng, LABELS[rng.choice(len(LABELS), p=LABEL_PROBS)]) for _ in range(n)]


def financial_documents(n_docs: int, sentences_per_doc: int, seed: int) -> List[List[str]]:
    """Articles that each follow one company with a consistent tone.

    A document is good news or bad news: most of its sentences carry that
    label, the rest are neutral background. Coherence of company and tone is
    what next-sentence prediction can pick up on.
    """
    rng = np.random.default_rng(seed)
    docs = []
    for _ in range(n_docs):
        company = _pick(rng, COMPANIES)
        tone = "positive" if rng.random() < 0.5 else "negative"
        doc = []
        for _ in range(sentences_per_doc):
            label = tone if rng.random() < 0.7 else "neutral"
            words = sentiment_sentence(rng, label).split()
            doc.append(" ".join(company if w in COMPANIES else w for w in words))
        docs.append(doc)
    return docs


def general_corpus(n: int, seed: int) -> List[str]:
    """Out-of-domain sentences sharing function words with the financial register."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        subject, place = _pick(rng, GENERAL_SUBJECTS), _pick(rng, GENERAL_PLACES)
        verb = _pick(rng, UP_WORDS[:4] + DOWN_WORDS[:4])
        n_ = _pick(rng, NUMBERS)
        templates = (
            f"{subject} in {place} {verb} {n_} percent on {_pick(rng, DAYS)} .",
            f"{_pick(rng, GENERAL_WEATHER)} is expected in {place} in the {_pick(rng, QUARTERS)} week .",
            f"{_pick(rng, GENERAL_ACTIVITIES)} is popular in {place} , said the guide .",
            f"on {_pick(rng, DAYS)} , {subject} {verb} by {n_} points .",
        )
        out.append(templates[rng.integers(len(templates))])
    return out


def grammar_corpus(n: int, seed: int) -> List[str]:
    """The deterministic-grammar corpus used to check that masked-LM training learns."""
    return financial_corpus(n, seed)
