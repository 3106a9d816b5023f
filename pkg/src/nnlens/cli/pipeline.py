"""Pipeline stages that read and write a fixed workspace layout.

``<workspace>/corpus``       generated task corpora and the vocabulary
``<workspace>/models``       language model checkpoint, training log, probe
``<workspace>/activations``  the activation store plus the corpus it indexes
``<workspace>/results``      syntax, probe and attribution reports

Every stage checks that its inputs exist and names the subcommand that
produces them otherwise. JSON artifacts carry no timestamps, so a config
with fixed seeds reproduces them byte for byte.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable

from filelock import FileLock, Timeout

from ..attribute import PlayerPartition, decompose_forward, make_method, render_text
from ..corpus import Corpus, Vocab, build_vocab, generate_lakretz_tasks, load_corpus, load_lexicon, save_corpus
from ..errors import MissingArtifactError
from ..extract import INDEX, MARKER, ActivationStore, extract
from ..model import TrainHyper, build_model, load_checkpoint, save_checkpoint, train_lm
from ..probe import NUMBER_LABELS, ProbeHyper, make_control_labels, number_labels, save_probe, train_probe
from ..syntax import condition_table, dumps_table, evaluate
from .config import Config

log = logging.getLogger(__name__)


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)

    @property
    def corpus(self) -> Path:
        return self.root / "corpus"

    @property
    def models(self) -> Path:
        return self.root / "models"

    @property
    def activations(self) -> Path:
        return self.root / "activations"

    @property
    def results(self) -> Path:
        return self.root / "results"

    @property
    def lock(self) -> Path:
        return self.root / ".nnlens.lock"

    def task_file(self, task: str) -> Path:
        return self.corpus / f"{task}.jsonl"

    @property
    def vocab_file(self) -> Path:
        return self.corpus / "vocab.json"

    @property
    def checkpoint(self) -> Path:
        return self.models / "lm.nnlt"

    def ensure(self) -> None:
        for d in (self.corpus, self.models, self.activations, self.results):
            d.mkdir(parents=True, exist_ok=True)


def write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _missing(what: str, path: Path, producer: str) -> MissingArtifactError:
    return MissingArtifactError(f"{what} not found at {path}; run {producer} first")


def _load_vocab(ws: Workspace) -> Vocab:
    if not ws.vocab_file.exists():
        raise _missing("vocabulary", ws.vocab_file, "generate")
    return Vocab(json.loads(ws.vocab_file.read_text(encoding="utf-8")))


def _load_tasks(ws: Workspace, tasks, vocab: Vocab) -> dict[str, Corpus]:
    out = {}
    for task in tasks:
        path = ws.task_file(task)
        if not path.exists():
            raise _missing(f"corpus for task {task!r}", path, "generate")
        out[task] = load_corpus(path, vocab, name=task)
    return out


def _load_model(ws: Workspace):
    if not ws.checkpoint.exists():
        raise _missing("model checkpoint", ws.checkpoint, "train-lm")
    return load_checkpoint(ws.checkpoint)


def stage_generate(cfg: Config, ws: Workspace) -> list[Path]:
    lexicon = load_lexicon(cfg.corpus.lexicon)
    tasks = generate_lakretz_tasks(lexicon, cfg.corpus.seed, cfg.corpus.per_task_count, cfg.corpus.tasks)
    vocab = build_vocab(tasks.values())
    written = []
    for name, corpus in tasks.items():
        save_corpus(corpus, ws.task_file(name))
        written.append(ws.task_file(name))
    written.append(write_json(ws.vocab_file, vocab.to_list()))
    log.info("generated %d tasks, vocabulary of %d types", len(tasks), len(vocab))
    return written


def stage_train(cfg: Config, ws: Workspace) -> list[Path]:
    vocab = _load_vocab(ws)
    corpus = Corpus.concat(list(_load_tasks(ws, cfg.train.tasks, vocab).values()), name="train").with_vocab(vocab)
    m = cfg.model
    if m.type == "lstm":
        model = build_model("lstm", vocab, d=m.d, hidden=m.hidden, layers=m.layers, seed=m.seed)
    else:
        model = build_model("transformer", vocab, d=m.d, layers=m.layers, heads=m.heads, ffn=m.ffn,
                            max_len=m.max_len, mode=m.mode, seed=m.seed)
    t = cfg.train
    hyper = TrainHyper(lr=t.lr, batch=t.batch, epochs=t.epochs, seed=t.seed, clip=t.clip, mask_rate=t.mask_rate)
    model, losses = train_lm(model, corpus, hyper)
    weights = save_checkpoint(model, ws.checkpoint)
    logfile = write_json(ws.models / "train_log.json", {"hyper": asdict(hyper), "epoch_loss": losses})
    return [weights, weights.with_suffix(".json"), logfile]


def stage_extract(cfg: Config, ws: Workspace) -> list[Path]:
    model = _load_model(ws)
    corpus = Corpus.concat(list(_load_tasks(ws, cfg.extract.tasks, model.vocab).values()), name="extract")
    corpus = corpus.with_vocab(model.vocab)
    e = cfg.extract
    store = extract(model, corpus, keys=e.keys, selection=e.selection, flush_every=e.flush_every,
                    out_dir=ws.activations, batch_size=e.batch_size)
    save_corpus(corpus, ws.activations / "corpus.jsonl")
    log.info("extracted %s for %d sentences", [str(k) for k in store.keys], len(corpus))
    return [ws.activations / INDEX, ws.activations / "corpus.jsonl"]


def _open_store(ws: Workspace) -> tuple[ActivationStore, Corpus]:
    if not (ws.activations / INDEX).exists() or not (ws.activations / MARKER).exists():
        raise _missing("finalized activation store", ws.activations, "extract")
    store = ActivationStore(ws.activations)
    corpus = load_corpus(ws.activations / "corpus.jsonl", name="extract")
    return store, corpus


def stage_probe(cfg: Config, ws: Workspace) -> list[Path]:
    store, corpus = _open_store(ws)
    p = cfg.probe
    x, owners = store.matrix(p.key)
    positions = [store.positions(i, p.key) for i in range(len(corpus))]
    labels = number_labels(corpus, positions)
    control = make_control_labels(corpus, positions, num_classes=2, seed=p.control_seed)
    hyper = ProbeHyper(lr=p.lr, l2=p.l2, epochs=p.epochs, seed=p.seed)
    probe, report = train_probe(x, labels, hyper, groups=owners, control_labels=control, label_names=NUMBER_LABELS)
    weights = save_probe(probe, ws.models / "probe.nnlt", hyper, p.key)
    out = write_json(ws.results / "probe_report.json",
                     {"activation_key": p.key, "hyper": asdict(hyper), "rows": int(len(labels)),
                      "control_seed": p.control_seed, **report.to_json()})
    print(f"probe {p.key}: task test {report.task.test:.4f}, control test {report.control.test:.4f}, "
          f"selectivity {report.selectivity:+.4f}")
    return [weights, out]


def stage_syntax(cfg: Config, ws: Workspace) -> list[Path]:
    model = _load_model(ws)
    tasks = _load_tasks(ws, cfg.syntax.tasks, model.vocab)
    results = {name: evaluate(model, corpus) for name, corpus in tasks.items()}
    table = condition_table(results, model_name="lm")
    out = ws.results / "syntax_results.json"
    out.write_text(dumps_table(table), encoding="utf-8")
    (ws.results / "syntax_table.txt").write_text(table.to_text() + "\n", encoding="utf-8")
    print(table.to_text())
    return [out, ws.results / "syntax_table.txt"]


def _attribution_input(model, sentence) -> list[str]:
    """The prefix up to the verb, or the whole sentence with the verb masked."""
    v = sentence.meta["verb_index"]
    if model.masked:
        words = list(sentence.words)
        words[v] = model.vocab.token(model.vocab.mask_id)
        return words
    return list(sentence.words[:v])


def stage_attribute(cfg: Config, ws: Workspace) -> list[Path]:
    model = _load_model(ws)
    a = cfg.attribute
    corpus = _load_tasks(ws, [a.task], model.vocab)[a.task]
    options = {"exact": {}, "sampling": {"m": a.m, "seed": a.seed}, "cd": {"normalize": a.normalize}}[a.method]
    method = make_method(a.method, **options)
    records, texts = [], []
    for i in range(min(a.sentences, len(corpus))):
        s = corpus[i]
        words = _attribution_input(model, s)
        ids = model.vocab.encode(words)
        targets = [model.vocab.index(s.meta["verb_correct"]), model.vocab.index(s.meta["verb_wrong"])]
        attrs = decompose_forward(model, ids, PlayerPartition.per_token(len(ids)), method, targets, form=a.form)
        records.append({"sentence_id": i, "condition": s.meta.get("condition"), "text": " ".join(s.words),
                        "attributions": [x.to_json() for x in attrs]})
        texts.extend(render_text(x) for x in attrs)
    out = write_json(ws.results / "attributions.json",
                     {"task": a.task, "model": ws.checkpoint.name, "sentences": records})
    print("\n\n".join(texts))
    return [out]


STAGES: dict[str, Callable[[Config, Workspace], list[Path]]] = {
    "generate": stage_generate,
    "train-lm": stage_train,
    "extract": stage_extract,
    "syntax": stage_syntax,
    "probe": stage_probe,
    "attribute": stage_attribute,
}
ORDER = ("generate", "train-lm", "extract", "syntax", "probe", "attribute")


def run(subcommand: str, cfg: Config) -> list[Path]:
    """Run one stage (or every stage for ``all``) under the workspace lock."""
    ws = Workspace(cfg.workspace)
    ws.ensure()
    names = ORDER if subcommand == "all" else (subcommand,)
    try:
        with FileLock(str(ws.lock), timeout=0):
            written = []
            for name in names:
                log.info("stage %s", name)
                written.extend(STAGES[name](cfg, ws))
            return written
    except Timeout:
        raise MissingArtifactError(f"workspace {ws.root} is locked by another nnlens run ({ws.lock})") from None
