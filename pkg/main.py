"""
Command-line entry point for the ensemble attack toolkit
Generates data, trains surrogates and targets, runs attacks, and scores transfer, sweeps and defenses
"""

import os
import sys
import argparse
import logging
from pathlib import Path
from typing import List, Optional, Sequence

from dotenv import load_dotenv

# Add src directory to Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from components.artifact_store import ArtifactStore, RunManifest, get_artifact_store
from components.audio_core import load_wav, resample
from components.blackbox import create_targets
from components.config import (
    TOOL_VERSION,
    DEFAULT_FEATURES,
    AttackConfig,
    Strategy,
    configure_logging,
    get_attack_config,
)
from components.dataset import generate_carriers, generate_dataset
from components.ensemble_attack import load_attack_result, run_attack, save_attack_result
from components.errors import ArgumentError, EadvError
from components.eval_harness import (
    DEFAULT_P_GRID,
    SILENCE_COUNTS,
    TABLE_NOISE_LEVELS,
    DefenseKind,
    DefenseSpec,
    evaluate_defense,
    gradient_diversity,
    noise_level_sweep,
    p_sweep,
    silence_comparison,
    strategy_comparison,
    write_report,
)
from components.surrogate_models import train_surrogates

# Configure logging
logger = logging.getLogger(__name__)

SURROGATE_SET = [("surrogate-linear", "MEANPOOL-LINEAR"), ("surrogate-mlp", "MLP"), ("surrogate-conv", "CONV1D")]
TARGET_SET = [("target-mlp", "MLP"), ("target-conv", "CONV1D")]
TARGET_SEED_OFFSET = 1

EXIT_OK = 0
EXIT_FAILURE = 1


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _strategy_list(text: str) -> List[Strategy]:
    try:
        return [Strategy(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"unknown strategy in {text!r}") from e


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=int(os.getenv("EADV_SEED", "0")), help="Seed for all randomness")
    common.add_argument('--config', type=str, default=None, help="JSON or TOML attack config file")
    common.add_argument('--out', type=str, default=None, help="Output directory")
    common.add_argument('--jobs', type=int, default=int(os.getenv("EADV_JOBS", "1")), help="Worker threads for attacks")
    return common


def _attack_flags() -> argparse.ArgumentParser:
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument('--strategy', type=str, default=None, help="single, self_ensemble, scale_invariant, rge, dgwe, loss_ensemble")
    flags.add_argument('--epsilon', type=float, default=None, help="L-infinity budget")
    flags.add_argument('--iterations', type=int, default=None, help="Outer iterations T")
    flags.add_argument('--rounds', type=int, default=None, help="Smoothing rounds M")
    flags.add_argument('--p', dest="dropout", type=float, default=None, help="Dropout probability")
    flags.add_argument('--noise', type=float, default=None, help="Smoothing noise amplitude (normalized units)")
    flags.add_argument('--momentum', type=float, default=None, help="Momentum decay")
    flags.add_argument('--sigma', type=float, default=None, help="DGWE smoothness")
    flags.add_argument('--lr', type=float, default=None, help="Adam learning rate")
    flags.add_argument('--level', dest="ensemble_level", type=str, default=None, help="loss, logits or predictions")
    flags.add_argument('--query-every', dest="query_every", type=int, default=None, help="Iterations between probes")
    flags.add_argument('--source-model', dest="source_model", type=int, default=None, help="Surrogate for single-model strategies")
    flags.add_argument('--m-scales', dest="m_scales", type=int, default=None, help="Scale copies")
    flags.add_argument('--silence-frames', dest="silence_frames", type=int, default=None, help="Zero frames inserted before attacking")
    flags.add_argument('--early-stop', dest="early_stop", action="store_const", const=True, default=None,
                       help="Stop once every black-box target returns the command")
    return flags


def _fixture_flags() -> argparse.ArgumentParser:
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument('--models', type=str, required=True, help="Directory written by train")
    flags.add_argument('--carriers', type=int, default=5, help="Carriers per command")
    flags.add_argument('--carrier-seconds', dest="carrier_seconds", type=float, default=4.0, help="Carrier duration")
    return flags


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    attack_flags = _attack_flags()
    fixture = _fixture_flags()

    parser = argparse.ArgumentParser(prog="eadv", description="Transferable audio adversarial examples via surrogate ensembles")
    parser.add_argument('--version', action="version", version=f"%(prog)s {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="Generate the synthetic command dataset")
    p.add_argument('--classes', type=int, default=4, help="Number of commands K")
    p.add_argument('--per-class', dest="per_class", type=int, default=25, help="Clips per command")
    p.add_argument('--clip-seconds', dest="clip_seconds", type=float, default=4.0, help="Clip duration")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="Train surrogates and held-out targets")
    p.add_argument('--data', type=str, required=True, help="Directory written by gen-data")
    p.add_argument('--epochs', type=int, default=200, help="Epoch cap")
    p.add_argument('--train-lr', dest="train_lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument('--batch', type=int, default=8, help="Mini-batch size")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("attack", parents=[common, attack_flags], help="Attack one carrier")
    p.add_argument('--models', type=str, required=True, help="Directory written by train")
    p.add_argument('--carrier', type=str, required=True, help="Carrier WAV (PCM16 mono)")
    p.add_argument('--target', type=int, required=True, help="Target command id")
    p.set_defaults(handler=cmd_attack)

    p = sub.add_parser("evaluate", parents=[common, attack_flags, fixture], help="Transfer rates per strategy")
    p.add_argument('--strategies', type=_strategy_list, default=[Strategy.SINGLE, Strategy.RGE, Strategy.DGWE],
                   help="Comma-separated strategies")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("defend", parents=[common], help="Transfer rates under input defenses")
    p.add_argument('--models', type=str, required=True, help="Directory written by train")
    p.add_argument('--attacks', type=str, required=True, help="Directory of attack JSON/WAV pairs")
    p.add_argument('--downsample', type=_float_list, default=[5200, 5600, 6000], help="Downsampling rates in Hz")
    p.add_argument('--noise-levels', dest="noise_levels", type=_float_list, default=[500, 1000, 2000],
                   help="Additive noise amplitudes in 16-bit units")
    p.set_defaults(handler=cmd_defend)

    p = sub.add_parser("sweep-p", parents=[common, attack_flags, fixture], help="RGE/DGWE transfer per dropout p")
    p.add_argument('--p-values', dest="p_values", type=_float_list, default=DEFAULT_P_GRID, help="Dropout grid")
    p.set_defaults(handler=cmd_sweep_p)

    p = sub.add_parser("sweep-noise", parents=[common, attack_flags, fixture], help="Transfer per smoothing noise level")
    p.add_argument('--levels', type=_float_list, default=TABLE_NOISE_LEVELS, help="Noise levels in 16-bit units")
    p.add_argument('--no-reference-rows', dest="reference_rows", action="store_false",
                   help="Skip the dropout and scale-invariant comparison rows")
    p.set_defaults(handler=cmd_sweep_noise)

    p = sub.add_parser("sweep-silence", parents=[common, attack_flags, fixture],
                       help="RGE/DGWE transfer with and without silence frames")
    p.add_argument('--counts', type=_float_list, default=SILENCE_COUNTS, help="Silence frame counts")
    p.set_defaults(handler=cmd_sweep_silence)

    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

ATTACK_FIELDS = ("strategy", "epsilon", "iterations", "rounds", "dropout", "noise", "momentum", "sigma", "lr",
                 "ensemble_level", "query_every", "source_model", "m_scales", "silence_frames", "early_stop")


def _attack_config(args, **forced) -> AttackConfig:
    overrides = {name: getattr(args, name, None) for name in ATTACK_FIELDS}
    overrides.update(forced)
    return get_attack_config(args.config, seed=args.seed, **overrides)


def _store(args) -> ArtifactStore:
    return get_artifact_store(args.out or os.path.join("runs", args.command))


def _load_fixture_models(models_dir: str):
    surrogates, target_models = ArtifactStore(models_dir).load_models()
    return surrogates, create_targets(target_models)


def _carriers(args):
    return generate_carriers(args.seed, n=args.carriers, clip_seconds=args.carrier_seconds)


def _report_meta(args, cfg: AttackConfig, **extra) -> dict:
    meta = {
        "command": args.command,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": args.seed,
        "features": DEFAULT_FEATURES.to_dict(),
        "tool_version": TOOL_VERSION,
    }
    meta.update(extra)
    return meta


def _manifest(args, cfg: Optional[AttackConfig], inputs: dict, outputs: Sequence[Path], store: ArtifactStore,
              **details) -> RunManifest:
    manifest = RunManifest(
        command=args.command,
        config=cfg.to_dict() if cfg else {},
        seeds={"seed": args.seed},
        inputs=inputs,
        outputs=[str(Path(p).relative_to(store.root)) for p in outputs],
        config_hash=cfg.config_hash() if cfg else "",
        details=details,
    )
    store.write_manifest(manifest)
    return manifest


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    dataset = generate_dataset(args.seed, args.classes, args.per_class, args.clip_seconds)
    store = _store(args)
    store.save_dataset(dataset)
    logger.info(f"Dataset written to {store.root}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = ArtifactStore(args.data).load_dataset()
    train_args = dict(lr=args.train_lr, batch_size=args.batch, max_epochs=args.epochs)

    surrogates = train_surrogates(dataset, [a for _, a in SURROGATE_SET], args.seed,
                                  names=[n for n, _ in SURROGATE_SET], **train_args)
    targets = train_surrogates(dataset, [a for _, a in TARGET_SET], args.seed + TARGET_SEED_OFFSET,
                               names=[n for n, _ in TARGET_SET], **train_args)

    store = _store(args)
    manifest = RunManifest(
        command="train",
        config={"lr": args.train_lr, "batch_size": args.batch, "max_epochs": args.epochs},
        seeds={"train": args.seed, "targets": args.seed + TARGET_SEED_OFFSET, "data": dataset.seed},
        inputs={"data": str(args.data)},
    )
    store.save_models(surrogates, targets, manifest)
    return EXIT_OK


def cmd_attack(args) -> int:
    surrogates, targets = _load_fixture_models(args.models)
    cfg = _attack_config(args)

    carrier = load_wav(args.carrier)
    if carrier.sample_rate != DEFAULT_FEATURES.sample_rate:
        carrier = resample(carrier, DEFAULT_FEATURES.sample_rate, antialias=True)

    result = run_attack(surrogates, carrier, args.target, cfg, targets)
    store = _store(args)
    wav_path, json_path = save_attack_result(result, str(store.root), "attack")
    _manifest(args, cfg, {"models": args.models, "carrier": args.carrier}, [wav_path, json_path], store,
              target=args.target, whitebox_success=result.whitebox_success)
    return EXIT_OK if result.fooled_all_surrogates else EXIT_FAILURE


def _aes_dir(label: str) -> str:
    return label.replace("[", "_").replace("]", "")


def cmd_evaluate(args) -> int:
    surrogates, targets = _load_fixture_models(args.models)
    cfg = _attack_config(args)
    carriers = _carriers(args)
    commands = list(range(surrogates[0].n_classes))

    frame, results = strategy_comparison(surrogates, carriers, commands, cfg, targets, args.strategies, args.jobs)

    store = _store(args)
    outputs = []
    for label, batch in results.items():
        for result in batch:
            stem = f"c{result.target}_s{result.carrier_index}"
            outputs.extend(save_attack_result(result, str(store.root / "aes" / _aes_dir(label)), stem))

    diversity = gradient_diversity(surrogates, carriers, commands)
    meta = _report_meta(args, cfg, strategies=[s.value for s in args.strategies], diversity=diversity,
                        queries={t.name: t.queries for t in targets})
    outputs.extend(write_report(frame, meta, str(store.root), "transfer"))
    _manifest(args, cfg, {"models": args.models}, outputs, store, carriers=args.carriers)
    return EXIT_OK


def cmd_defend(args) -> int:
    _, targets = _load_fixture_models(args.models)
    attack_dir = Path(args.attacks)
    paths = sorted(p for p in attack_dir.glob("*.json") if p.name != "manifest.json")
    if not paths:
        raise ArgumentError(f"no attack results in {attack_dir}")
    results = [load_attack_result(str(p)) for p in paths]

    specs = [DefenseSpec(DefenseKind.DOWNSAMPLE, r) for r in args.downsample]
    specs += [DefenseSpec(DefenseKind.ADD_NOISE, a) for a in args.noise_levels]
    frame = evaluate_defense(results, specs, targets, seed=args.seed, include_undefended=True)

    cfg = AttackConfig.from_dict(results[0].config) if results[0].config else None
    store = _store(args)
    meta = {
        "command": args.command,
        "attacks": str(attack_dir),
        "config_hash": results[0].config_hash,
        "defenses": [s.label for s in specs],
        "seed": args.seed,
    }
    outputs = write_report(frame, meta, str(store.root), "defense")
    _manifest(args, cfg, {"models": args.models, "attacks": args.attacks}, outputs, store)
    return EXIT_OK


def cmd_sweep_p(args) -> int:
    surrogates, targets = _load_fixture_models(args.models)
    cfg = _attack_config(args)
    carriers = _carriers(args)
    commands = list(range(surrogates[0].n_classes))

    frame = p_sweep(surrogates, carriers, commands, args.p_values, cfg, targets, jobs=args.jobs)
    store = _store(args)
    outputs = write_report(frame, _report_meta(args, cfg, p_values=args.p_values), str(store.root), "sweep_p")
    _manifest(args, cfg, {"models": args.models}, outputs, store)
    return EXIT_OK


def cmd_sweep_noise(args) -> int:
    surrogates, targets = _load_fixture_models(args.models)
    forced = {} if args.strategy else {"strategy": Strategy.SINGLE}
    cfg = _attack_config(args, **forced)
    carriers = _carriers(args)
    commands = list(range(surrogates[0].n_classes))

    frame = noise_level_sweep(surrogates, carriers, commands, args.levels, cfg, targets,
                              include_reference_rows=args.reference_rows, jobs=args.jobs)
    store = _store(args)
    outputs = write_report(frame, _report_meta(args, cfg, levels=args.levels), str(store.root), "sweep_noise")
    _manifest(args, cfg, {"models": args.models}, outputs, store)
    return EXIT_OK


def cmd_sweep_silence(args) -> int:
    surrogates, targets = _load_fixture_models(args.models)
    cfg = _attack_config(args)
    carriers = _carriers(args)
    commands = list(range(surrogates[0].n_classes))

    frame = silence_comparison(surrogates, carriers, commands, cfg, targets, counts=args.counts, jobs=args.jobs)
    store = _store(args)
    outputs = write_report(frame, _report_meta(args, cfg, counts=args.counts), str(store.root), "sweep_silence")
    _manifest(args, cfg, {"models": args.models}, outputs, store)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one subcommand and map failures to exit statuses"""
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        configure_logging()
        return args.handler(args)
    except EadvError as e:
        print(f"eadv {args.command}: {e}", file=sys.stderr)
        return e.exit_status
    except FileNotFoundError as e:
        print(f"eadv {args.command}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        logger.error(f"I/O failure in {args.command}: {e}")
        print(f"eadv {args.command}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
