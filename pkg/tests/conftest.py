import pytest

from aec.annotations import AnnotatedSentence, EmotionLexicon, Token


def tok(index, form, xpos, head, deprel, entity=None):
    return Token(index=index, form=form, upos="X", head=head, deprel=deprel, xpos=xpos, entity=entity)


def sentence(spec, sid="s1"):
    """Build a sentence from (form, xpos, head, deprel[, entity]) tuples."""
    toks = []
    for i, item in enumerate(spec, start=1):
        form, xpos, head, deprel, *rest = item
        toks.append(tok(i, form, xpos, head, deprel, rest[0] if rest else None))
    return AnnotatedSentence(sid, tuple(toks))


@pytest.fixture
def happy_lexicon():
    return EmotionLexicon({"happy": frozenset({"joy", "positive"})})


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
