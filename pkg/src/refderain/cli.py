"""``refderain`` command line: every workflow step reads one YAML run config.

Exit codes: 0 success, 2 bad config, 3 missing prerequisite, 4 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from .baseline import MedianBaseline, load_baseline, train_baseline
from .config import ConfigError, RunConfig, load_config
from .data import load_split
from .evaluator import (
    Method, evaluate_split, export_attention_map, noise_reference, psnr, reference_ablation,
)
from .imageio import load_image, save_image
from .losses import ssim
from .model import RdfModel
from .rain_synth import DatasetManifest, make_dataset
from .retrieval import RetrievalIndex, build_index
from .toy_corpus import write_toy_corpus
from .trainer import infer, train_finetune, train_init

logger = logging.getLogger("refderain")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 2, 3, 4
EFFECTIVE_CONFIG = "config.effective.yaml"


class MissingPrerequisite(RuntimeError):
    pass


class Refused(RuntimeError):
    pass


class Run:
    """Artifact layout of one run directory."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.root = cfg.run_path
        self.manifest = self.root / "manifest.json"
        self.index = self.root / "index.json"
        self.ckpt = self.root / "ckpt"
        self.baseline = self.ckpt / "baseline.ckpt"
        self.rdf_init = self.ckpt / "rdf-init.ckpt"
        self.rdf_final = self.ckpt / "rdf-final.ckpt"
        self.logs = self.root / "logs"
        self.reports = self.root / "reports"
        self.viz = self.root / "viz"

    def require(self, path: Path, producer: str, why: str = "") -> Path:
        if not path.exists():
            extra = f" ({why})" if why else ""
            raise MissingPrerequisite(f"missing {path}{extra}; run `refderain {producer}` first")
        return path

    def echo_config(self, force: bool) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        target = self.root / EFFECTIVE_CONFIG
        text = self.cfg.to_yaml()
        if target.exists() and target.read_text(encoding="utf-8") != text and not force:
            raise ConfigError(f"{target} holds a different effective config; "
                              "use a fresh run directory or pass --force")
        target.write_text(text, encoding="utf-8")

    def guard(self, path: Path, force: bool) -> None:
        if path.exists() and not force:
            raise Refused(f"{path} exists; pass --force to overwrite")

    def load_manifest(self) -> DatasetManifest:
        return DatasetManifest.load(self.require(self.manifest, "synth"))

    def load_index(self) -> RetrievalIndex:
        return RetrievalIndex.load(self.require(self.index, "index"), root=self.root)

    def load_baseline(self):
        return load_baseline(self.require(self.baseline, "train-baseline"))

    def load_rdf(self) -> RdfModel:
        if self.rdf_final.exists():
            return RdfModel.load(self.rdf_final)
        return RdfModel.load(self.require(self.rdf_init, "train-rdf --stage init"))


def cmd_toy_corpus(args) -> int:
    out = write_toy_corpus(args.out_dir, args.size, args.seed)
    print(out)
    return EXIT_OK


def cmd_default_config(args) -> int:
    sys.stdout.write(RunConfig().to_yaml())
    return EXIT_OK


def cmd_synth(run: Run, args) -> int:
    cfg = run.cfg
    if not cfg.clean_path.is_dir():
        raise MissingPrerequisite(f"clean_dir does not exist: {cfg.clean_path}")
    manifest = make_dataset(cfg.clean_path, cfg.rain_params, cfg.data.splits, run.root)
    print(manifest.root / "manifest.json")
    return EXIT_OK


def cmd_index(run: Run, args) -> int:
    index = build_index(run.load_manifest(), run.cfg.eval.index_split)
    print(index.save(run.index))
    return EXIT_OK


def cmd_train_baseline(run: Run, args) -> int:
    run.guard(run.baseline, args.force)
    bcfg = run.cfg.baseline_config
    if bcfg.kind == "prior":
        MedianBaseline().save(run.baseline)
    else:
        samples = load_split(run.load_manifest(), "train")
        train_baseline(samples, bcfg, checkpoint_path=run.baseline,
                       log_path=run.logs / "baseline.jsonl")
    print(run.baseline)
    return EXIT_OK


def cmd_train_rdf(run: Run, args) -> int:
    manifest = run.load_manifest()
    baseline = run.load_baseline()
    samples = load_split(manifest, "train")
    log = run.logs / "train.jsonl"
    if args.stage == "init":
        run.guard(run.rdf_init, args.force)
        model = RdfModel(run.cfg.rdf_config)
        train_init(model, baseline, samples, run.cfg.stage_config("init"), log, run.rdf_init)
        print(run.rdf_init)
    else:
        run.require(run.rdf_init, "train-rdf --stage init",
                    "the initialization stage must complete before fine-tuning")
        index = run.load_index().restrict(samples.ids)
        run.guard(run.rdf_final, args.force)
        model = RdfModel.load(run.rdf_init)
        train_finetune(model, baseline, samples, index, run.cfg.rain_params,
                       run.cfg.stage_config("finetune"), log, run.rdf_final)
        print(run.rdf_final)
    return EXIT_OK


def _lookup_record(manifest: DatasetManifest, input_path: Path, sample_id):
    target = input_path.resolve()
    for rec in manifest.records:
        if rec.sample_id == sample_id or manifest.resolve(rec.rainy_path) == target:
            return rec
    return None


def cmd_infer(run: Run, args) -> int:
    source = Path(args.input)
    if not source.is_file():
        raise MissingPrerequisite(f"input image not found: {source}")
    manifest = run.load_manifest()
    rec = _lookup_record(manifest, source, args.sample_id)
    rainy = load_image(source)
    baseline, model = run.load_baseline(), run.load_rdf()
    clean = load_image(manifest.resolve(rec.clean_path)) if rec else None
    query_id = rec.sample_id if rec else None
    kind = args.force_ref
    if kind == "gt":
        if clean is None:
            raise MissingPrerequisite(f"no manifest record for {source}; --force-ref gt needs its clean image")
        res = infer(model, baseline, rainy, None, run.cfg.rain_params, reference=clean,
                    reference_id=query_id)
    elif kind == "noise":
        key = query_id or source.stem
        res = infer(model, baseline, rainy, None, run.cfg.rain_params,
                    reference=noise_reference(rainy.shape, key, run.cfg.seed),
                    reference_id=f"noise:{key}")
    else:
        res = infer(model, baseline, rainy, run.load_index(), run.cfg.rain_params, query_id=query_id)
    stem = query_id or source.stem
    save_image(res.derained, run.viz / f"{stem}_derained.png")
    out = save_image(res.enhanced, run.viz / f"{stem}_enhanced_{kind}.png")
    line = f"input={source} ref_type={kind} ref_id={res.ref_id} output={out}"
    if clean is not None:
        line += (f" psnr_base={psnr(res.derained, clean):.4f} psnr_rdf={psnr(res.enhanced, clean):.4f}"
                 f" ssim_base={ssim(res.derained, clean):.4f} ssim_rdf={ssim(res.enhanced, clean):.4f}")
    print(line)
    return EXIT_OK


def cmd_eval(run: Run, args) -> int:
    cfg = run.cfg
    samples = load_split(run.load_manifest(), cfg.eval.split)
    index = run.load_index()
    method = Method(cfg.eval.method_name, run.load_baseline(), run.load_rdf())
    report = evaluate_split([method], samples, index, cfg.rain_params, cfg.data.dataset_tag)
    csv_path, txt_path = report.write(run.reports, "eval")
    sys.stdout.write(report.to_table())
    print(csv_path)
    return EXIT_OK


def cmd_ablate_reference(run: Run, args) -> int:
    cfg = run.cfg
    samples = load_split(run.load_manifest(), cfg.eval.split)
    report = reference_ablation(run.load_rdf(), run.load_baseline(), samples, run.load_index(),
                                cfg.rain_params, cfg.data.dataset_tag, cfg.seed)
    csv_path, _ = report.write(run.reports, "ablation")
    sys.stdout.write(report.to_table())
    print(csv_path)
    return EXIT_OK


def cmd_viz_attention(run: Run, args) -> int:
    source = Path(args.input)
    if not source.is_file():
        raise MissingPrerequisite(f"input image not found: {source}")
    manifest = run.load_manifest()
    rec = _lookup_record(manifest, source, args.sample_id)
    rainy = load_image(source)
    res = infer(run.load_rdf(), run.load_baseline(), rainy, run.load_index(), run.cfg.rain_params,
                query_id=rec.sample_id if rec else None)
    stem = rec.sample_id if rec else source.stem
    patch = 4 * run.cfg.model.level3_patch
    gh, gw = res.attention.grid
    out = export_attention_map(res.attention, run.viz / f"{stem}_attention.png", (gh * patch, gw * patch))
    print(out)
    return EXIT_OK


def cmd_pipeline(run: Run, args) -> int:
    steps = [
        (cmd_synth, {}), (cmd_index, {}), (cmd_train_baseline, {}),
        (cmd_train_rdf, {"stage": "init"}), (cmd_train_rdf, {"stage": "finetune"}),
        (cmd_eval, {}), (cmd_ablate_reference, {}),
    ]
    for fn, extra in steps:
        ns = argparse.Namespace(**{**vars(args), **extra})
        fn(run, ns)
    return EXIT_OK


RUN_COMMANDS = {
    "synth": cmd_synth,
    "index": cmd_index,
    "train-baseline": cmd_train_baseline,
    "train-rdf": cmd_train_rdf,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "ablate-reference": cmd_ablate_reference,
    "viz-attention": cmd_viz_attention,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refderain", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy-corpus", help="write the bundled 16-image procedural corpus")
    p.add_argument("out_dir")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    sub.add_parser("default-config", help="print the default run config as YAML")

    for name in RUN_COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", required=True, help="run config (YAML)")
        p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
        if name in ("train-rdf",):
            p.add_argument("--stage", choices=("init", "finetune"), required=True)
        if name in ("infer", "viz-attention"):
            p.add_argument("--input", required=True, help="rainy input image")
            p.add_argument("--sample-id", default=None, help="manifest id of the input, if known")
        if name == "infer":
            p.add_argument("--force-ref", choices=("gt", "noise", "retrieved"), default="retrieved")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "toy-corpus":
        return cmd_toy_corpus(args)
    if args.command == "default-config":
        return cmd_default_config(args)
    try:
        run = Run(load_config(args.config))
        run.echo_config(args.force)
        return RUN_COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingPrerequisite, FileNotFoundError) as exc:
        print(f"missing prerequisite: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as exc:  # surfaced as a runtime failure exit code
        logger.debug("command failed", exc_info=True)
        print(f"error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
