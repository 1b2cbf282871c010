"""Command-line entry point: ``kgreason ask|retrieve|eval|sweep|cache``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from typing import Sequence

from . import __version__
from .backend import PRESET_NAMESPACES, InMemoryBackend, KgBackend, KgEndpointConfig, SparqlBackend, load_templates
from .config import ConfigError, RunConfig, env_name, load_config, parse_assignment
from .evaluation import DatasetError, load_dataset, run_eval, run_sweep
from .graph import GraphFormatError, load_tsv
from .linker import HttpEmbedder
from .llm import LlmClient, LlmGateway, ScriptedLlm, clear_disk_cache, disk_cache_usage
from .pipeline import Pipeline, PipelineError
from .retrieval import dump_json
from .selector import LexicalSelector, LlmSelector, OracleSelector, Question, Selector, load_oracle_plans

logger = logging.getLogger("kgreason")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INIT = 3
EXIT_PIPELINE = 4

# flag dest -> setting name
FLAG_SETTINGS = {
    "backend": "backend.kind",
    "graph": "backend.graph",
    "labels": "backend.labels",
    "sparql_url": "backend.sparql.url",
    "sparql_preset": "backend.sparql.preset",
    "sparql_templates": "backend.sparql.templates",
    "selector": "selector.kind",
    "plans": "selector.plans",
    "llm_url": "llm.base_url",
    "model": "llm.model",
    "llm_fixture": "llm.fixture",
    "relation_width": "expansion.relation_width",
    "entity_width": "expansion.entity_width",
    "iterations": "expansion.iterations",
    "temperature": "expansion.temperature",
    "max_frontier": "expansion.max_frontier",
    "mass": "expansion.mass",
    "linking": "linking.method",
    "templates": "run.templates",
    "output_dir": "run.output_dir",
    "cache_dir": "run.cache_dir",
    "parallelism": "run.parallelism",
    "seed": "run.seed",
}


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("configuration")
    g.add_argument("-c", "--config", help="TOML run configuration")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any setting, e.g. --set llm.timeout=60")
    g.add_argument("--backend", help="memory or sparql")
    g.add_argument("--graph", help="TSV triple file for the memory backend")
    g.add_argument("--labels", help="TSV id/label file for the memory backend")
    g.add_argument("--sparql-url")
    g.add_argument("--sparql-preset", help="bundled query templates: generic or wikidata")
    g.add_argument("--sparql-templates", help="directory of .rq query templates")
    g.add_argument("--selector", help="lexical, oracle or llm")
    g.add_argument("--plans", help="oracle plan JSON")
    g.add_argument("--llm-url", help="chat-completions base URL")
    g.add_argument("--model")
    g.add_argument("--llm-fixture", help="scripted replies JSON used instead of an endpoint")
    g.add_argument("--relation-width", type=int, metavar="K")
    g.add_argument("--entity-width", type=int, metavar="I")
    g.add_argument("--iterations", type=int, metavar="N")
    g.add_argument("--temperature", type=float, help="selection temperature")
    g.add_argument("--max-frontier", type=int)
    g.add_argument("--mass", help="entity mass for scoring: sum or max")
    g.add_argument("--linking", help="exact or embedding")
    g.add_argument("--templates", help="directory of prompt templates")
    g.add_argument("--output-dir")
    g.add_argument("--cache-dir")
    g.add_argument("--parallelism", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="kgreason", description="LLM-guided knowledge-graph question answering")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    ask = sub.add_parser("ask", parents=[common], help="answer one question")
    ask.add_argument("question")
    ask.add_argument("--id", help="question id (defaults to a hash of the text)")
    ask.add_argument("--topic", action="append", default=[], help="topic entity id; skips linking")

    ret = sub.add_parser("retrieve", parents=[common], help="retrieve a subgraph without reasoning")
    ret.add_argument("question")
    ret.add_argument("--id")
    ret.add_argument("--topic", action="append", default=[])
    ret.add_argument("--scores", action="store_true", help="include per-path score breakdown")
    ret.add_argument("--out", help="write the document here (relative to the output directory) instead of stdout")

    ev = sub.add_parser("eval", parents=[common], help="evaluate Hits@1 on a JSONL dataset")
    ev.add_argument("dataset")
    ev.add_argument("--sample", type=int)

    sw = sub.add_parser("sweep", parents=[common], help="grid over relation width and iterations")
    sw.add_argument("dataset")
    sw.add_argument("--sample", type=int)
    sw.add_argument("--k", default="1..3", help="relation widths, e.g. 1..3 or 1,2")
    sw.add_argument("--n", default="1..3", help="iteration counts")
    sw.add_argument("--seeds", default="0", help="comma-separated seeds")
    sw.add_argument("--plot-format", default="png", help="png, pdf, svg or none")

    cache = sub.add_parser("cache", parents=[common], help="inspect or clear the response cache")
    cache.add_argument("action", choices=["stats", "clear"])
    return parser


def parse_range(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("..")
        try:
            out.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
        except ValueError as exc:
            raise ConfigError(f"bad range {text!r}") from exc
    if not out:
        raise ConfigError(f"empty range {text!r}")
    return out


def config_from_args(args: argparse.Namespace, environ=None) -> RunConfig:
    overrides: dict[str, object] = {}
    for a in args.set:
        k, v = parse_assignment(a)
        overrides[k] = v
    for dest, key in FLAG_SETTINGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            overrides[key] = v
    if args.verbose:
        overrides["run.verbose"] = True
    return load_config(args.config, overrides, environ)


def build_backend(cfg: RunConfig) -> KgBackend:
    if cfg["backend.kind"] == "memory":
        try:
            return InMemoryBackend(load_tsv(cfg["backend.graph"], cfg["backend.labels"]))
        except (GraphFormatError, OSError) as exc:
            raise ConfigError(str(exc)) from exc
    ent_ns, rel_ns, rel_label_ns = PRESET_NAMESPACES[cfg["backend.sparql.preset"]]
    endpoint = KgEndpointConfig(
        base_url=cfg["backend.sparql.url"],
        timeout=cfg["backend.sparql.timeout"],
        max_retries=cfg["backend.sparql.max_retries"],
        templates=load_templates(cfg["backend.sparql.templates"], cfg["backend.sparql.preset"]),
        entity_namespace=cfg["backend.sparql.entity_namespace"] or ent_ns,
        relation_namespace=cfg["backend.sparql.relation_namespace"] or rel_ns,
        relation_label_namespace=cfg["backend.sparql.relation_label_namespace"] or rel_label_ns,
        max_candidates=cfg["backend.sparql.max_candidates"],
        max_in_flight=cfg["backend.sparql.max_in_flight"],
        method=cfg["backend.sparql.method"],
        label_dump=cfg["backend.sparql.label_dump"],
        bearer_token_env=cfg["backend.sparql.token_env"],
    )
    return SparqlBackend(endpoint)


def build_llm(cfg: RunConfig) -> LlmClient:
    if cfg["llm.fixture"]:
        return ScriptedLlm.from_file(cfg["llm.fixture"])
    if not cfg["llm.base_url"]:
        raise ConfigError(f"a language model is needed: set llm.base_url ({env_name('llm.base_url')}) or llm.fixture")
    return LlmGateway(
        cfg["llm.base_url"],
        cache_dir=cfg.cache_dir,
        api_key_env=cfg["llm.api_key_env"],
        timeout=cfg["llm.timeout"],
        max_retries=cfg["llm.max_retries"],
        max_in_flight=cfg["llm.max_in_flight"],
    )


def build_selector(cfg: RunConfig, llm: LlmClient | None) -> Selector:
    kind = cfg["selector.kind"]
    if kind == "lexical":
        return LexicalSelector()
    if kind == "oracle":
        return OracleSelector(load_oracle_plans(cfg["selector.plans"]))
    assert llm is not None
    return LlmSelector(
        llm, cfg["llm.model"], cfg["expansion.temperature"], cfg["run.seed"],
        cfg["selector.prompt_budget"], cfg["run.templates"],
    )


def build_pipeline(cfg: RunConfig, for_reasoning: bool = True) -> Pipeline:
    backend = build_backend(cfg)
    llm = build_llm(cfg) if cfg.needs_llm(for_reasoning) else None
    embedder = None
    if cfg["linking.method"] == "embedding":
        embedder = HttpEmbedder(
            cfg["linking.embed_url"], cfg["linking.embed_model"], cfg["llm.timeout"], cfg["llm.max_retries"],
            api_key=os.environ.get(cfg["llm.api_key_env"]),
        )
    return Pipeline(
        backend=backend,
        selector=build_selector(cfg, llm),
        llm=llm,
        expansion=cfg.expansion,
        linking=cfg["linking.method"],
        embedder=embedder,
        link_threshold=cfg["linking.threshold"],
        link_top_m=cfg["linking.top_m"],
        template_dir=cfg["run.templates"],
        model=cfg["llm.model"],
        reasoning_temperature=cfg["llm.reasoning_temperature"],
        seed=cfg["run.seed"],
        mass=cfg["expansion.mass"],
    )


def _question(args: argparse.Namespace) -> Question:
    qid = args.id or "q-" + hashlib.sha256(args.question.encode("utf-8")).hexdigest()[:12]
    return Question(qid, args.question)


def _topics(pipe: Pipeline, ids: Sequence[str]):
    from .linker import Provenance, TopicEntitySet

    if not ids:
        return None
    ents = []
    for i in ids:
        e = pipe.backend.entity(i)
        if e is None:
            raise CliError(EXIT_INIT, "initialization", f"topic entity {i!r} is not in the graph")
        ents.append(e)
    topics = TopicEntitySet()
    for e in ents:
        topics.add(e, Provenance(e.id, "given", 1.0))
    return topics


def _pipeline_error(exc: PipelineError) -> CliError:
    code = EXIT_INIT if exc.stage == "initialization" else EXIT_PIPELINE
    return CliError(code, exc.stage, str(exc))


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)[:80]


def cmd_ask(cfg: RunConfig, args: argparse.Namespace) -> int:
    pipe = build_pipeline(cfg, for_reasoning=True)
    q = _question(args)
    try:
        run = pipe.answer(q, _topics(pipe, args.topic))
    except PipelineError as exc:
        raise _pipeline_error(exc) from exc
    trace_path = cfg.output_dir / "ask" / f"{_safe(q.id)}.json"
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    trace_path.write_text(dump_json(run.to_json()), encoding="utf-8")
    doc = dict(run.answer.to_json(), question=q.text, trace_file=str(trace_path))
    print(json.dumps(doc, ensure_ascii=False, indent=2))
    return EXIT_OK


def cmd_retrieve(cfg: RunConfig, args: argparse.Namespace) -> int:
    pipe = build_pipeline(cfg, for_reasoning=False)
    q = _question(args)
    try:
        run = pipe.retrieve(q, _topics(pipe, args.topic))
    except PipelineError as exc:
        raise _pipeline_error(exc) from exc
    doc = run.to_json(include_paths=args.scores)
    if not args.scores:
        doc.pop("scores", None)
    text = dump_json(doc)
    if args.out:
        out = cfg.output_dir / args.out
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
        logger.info("wrote %s", out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _print_cache(pipe: Pipeline) -> None:
    if isinstance(pipe.llm, LlmGateway):
        hits, misses, stored = pipe.llm.cache_stats()
        print(f"cache hits={hits} misses={misses} stored_bytes={stored}", file=sys.stderr)


def _records(args: argparse.Namespace, cfg: RunConfig):
    try:
        return load_dataset(args.dataset, args.sample, cfg["run.seed"] or 0)
    except (DatasetError, OSError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    pipe = build_pipeline(cfg, for_reasoning=True)
    report = run_eval(_records(args, cfg), pipe, cfg.output_dir, cfg["run.parallelism"])
    print(report.summary_line())
    _print_cache(pipe)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace) -> int:
    ks, ns = parse_range(args.k), parse_range(args.n)
    seeds = parse_range(args.seeds)
    fmt = None if args.plot_format.lower() == "none" else args.plot_format.lower()
    if fmt not in (None, "png", "pdf", "svg"):
        raise ConfigError(f"unsupported plot format {args.plot_format!r}")
    pipe = build_pipeline(cfg, for_reasoning=True)
    grid = run_sweep(_records(args, cfg), pipe, ks, ns, seeds, cfg.output_dir, fmt, cfg["run.parallelism"])
    for n in grid.ns:
        for k in grid.ks:
            acc = grid.accuracy(k, n)
            print(f"K={k} N={n} hits@1 {'n/a' if acc is None else f'{acc:.3f}'}")
    print(f"sweep csv: {cfg.output_dir / 'sweep.csv'}")
    _print_cache(pipe)
    return EXIT_OK


def cmd_cache(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.action == "stats":
        entries, size = disk_cache_usage(cfg.cache_dir)
        print(json.dumps({"cache_dir": str(cfg.cache_dir), "entries": entries, "stored_bytes": size}))
    else:
        n = clear_disk_cache(cfg.cache_dir)
        print(json.dumps({"cache_dir": str(cfg.cache_dir), "removed": n}))
    return EXIT_OK


COMMANDS = {"ask": cmd_ask, "retrieve": cmd_retrieve, "eval": cmd_eval, "sweep": cmd_sweep, "cache": cmd_cache}


def _fail(err: CliError) -> int:
    print(json.dumps({"error": {"kind": err.kind, "code": err.code, "message": str(err)}}, ensure_ascii=False))
    logger.error("%s: %s", err.kind, err)
    return err.code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg, args)
    except CliError as err:
        return _fail(err)
    except ConfigError as exc:
        return _fail(CliError(EXIT_CONFIG, "config", str(exc)))
    except PipelineError as exc:
        return _fail(_pipeline_error(exc))
    except Exception as exc:  # anything else is a pipeline failure with a machine-readable trail
        logger.debug("unhandled error", exc_info=True)
        return _fail(CliError(EXIT_PIPELINE, "pipeline", f"{type(exc).__name__}: {exc}"))


if __name__ == "__main__":
    sys.exit(main())
