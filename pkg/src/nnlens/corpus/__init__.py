from .container import REQUIRED_META, Corpus, Sentence, load_corpus, save_corpus
from .lexicon import Lexicon, load_lexicon
from .templates import LAKRETZ_TASKS, Template, count_fillings, generate_lakretz_tasks, generate_task
from .vocab import EOS, MASK, PAD, SPECIALS, UNK, Vocab, tokenize


def build_vocab(corpora, extra=(".",)) -> Vocab:
    """Vocabulary over every word of the given corpora, both verb forms of each item, and ``extra``."""

    def words():
        for c in corpora:
            for s in c:
                yield from s.words
                for key in ("verb_correct", "verb_wrong"):
                    if key in s.meta:
                        yield s.meta[key]

    return Vocab.build(words(), extra=extra)


__all__ = [
    "REQUIRED_META", "Corpus", "Sentence", "load_corpus", "save_corpus",
    "Lexicon", "load_lexicon",
    "LAKRETZ_TASKS", "Template", "count_fillings", "generate_lakretz_tasks", "generate_task",
    "EOS", "MASK", "PAD", "SPECIALS", "UNK", "Vocab", "tokenize", "build_vocab",
]
