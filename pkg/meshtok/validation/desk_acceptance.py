import argparse
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List

import numpy as np
import torch
from tqdm import tqdm

from meshtok.codec.quantizer import Codebook
from meshtok.synthetic.dataset import DataSplit, SyntheticDataset, build_dataset
from meshtok.synthetic.template import build_desk_template
from meshtok.training.codec_trainer import train_codec
from meshtok.training.config import AblationFlags, Stage, TrainConfig
from meshtok.training.evaluation import MostFrequentTokenPredictor, evaluate
from meshtok.training.predictor_trainer import train_predictor

logger = logging.getLogger("desk_acceptance")

CHANCE_MULTIPLE = 20.0
CODEC_DIAGONAL_FRACTION = 0.03
MIN_CODEBOOK_USAGE = 0.5


@dataclass
class CheckResult:
    name: str
    passed: bool
    seconds: float
    values: Dict[str, Any] = field(default_factory=dict)


def cli() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Long-running desk-scale acceptance checks.")
    parser.add_argument("-o", "--out", required=True, help="Working directory for datasets, checkpoints and results.")
    parser.add_argument("--count", type=int, default=5000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--codec-epochs", type=int, default=50)
    parser.add_argument("--predictor-epochs", type=int, default=50)
    parser.add_argument("--skip-ablations", action="store_true")
    return parser.parse_args()


def check_quantization_oracle(grids: int = 1000, cells: int = 16, dim: int = 9, size: int = 512,
                              seed: int = 0) -> CheckResult:
    start = time.time()
    generator = torch.Generator().manual_seed(seed)
    codebook = Codebook(size, dim)
    codebook.set_entries(torch.randn(size, dim, generator=generator, dtype=torch.float64))
    latents = torch.randn(grids, cells, dim, generator=generator, dtype=torch.float64)
    tokens = codebook.nearest(latents)

    mismatches = 0
    entries = codebook.entries.numpy()
    for grid, grid_tokens in zip(latents.numpy(), tokens.numpy()):
        for row, token in zip(grid, grid_tokens):
            distances = ((entries - row) ** 2).sum(axis=1)
            if int(np.argmin(distances)) != int(token):
                mismatches += 1
    seconds = time.time() - start
    return CheckResult("quantization_oracle", mismatches == 0 and seconds < 10.0, seconds,
                       {"mismatches": mismatches})


def codec_config(seed: int, epochs: int) -> TrainConfig:
    return TrainConfig(stage=Stage.CODEC, epochs=epochs, batch_size=64, learning_rate=1e-3, seed=seed)


def predictor_config(seed: int, epochs: int, ablations: List[str]) -> TrainConfig:
    return TrainConfig(stage=Stage.PREDICTOR, epochs=epochs, batch_size=64, learning_rate=3e-4, seed=seed,
                       ablation=AblationFlags.from_names(ablations))


def check_codec(dataset: SyntheticDataset, seed: int, epochs: int, out_dir: str):
    start = time.time()
    result = train_codec(codec_config(seed, epochs), dataset, os.path.join(out_dir, "codec"), show_progress=True)
    rest = build_desk_template().rest_mesh.vertices
    diagonal_mm = float(np.linalg.norm(rest.max(axis=0) - rest.min(axis=0))) * 1000.0
    threshold = CODEC_DIAGONAL_FRACTION * diagonal_mm
    passed = result.validation_pve < threshold and result.codebook_usage >= MIN_CODEBOOK_USAGE
    check = CheckResult("codec_desk_training", passed, time.time() - start, {
        "validation_pve_mm": result.validation_pve,
        "threshold_mm": threshold,
        "codebook_usage": result.codebook_usage,
    })
    return check, result.codec


def check_predictor(dataset: SyntheticDataset, codec, seed: int, epochs: int, out_dir: str,
                    ablations: List[str], name: str):
    start = time.time()
    fingerprint = codec.fingerprint()
    result = train_predictor(predictor_config(seed, epochs, ablations), dataset, codec,
                             os.path.join(out_dir, name), show_progress=True)
    test_records = dataset.split(DataSplit.TEST)
    model_report = evaluate(result.model, codec, test_records, dataset.regressor)
    baseline = MostFrequentTokenPredictor(dataset.split(DataSplit.TRAIN), codec.codebook_size, result.model)
    baseline_report = evaluate(baseline, codec, test_records, dataset.regressor)

    summary = model_report.summary()
    baseline_summary = baseline_report.summary()
    pa_ok = all(sample.pa_mpjpe_mm <= sample.mpjpe_mm + 1e-9 for sample in model_report.samples)
    accuracy_ok = (summary["token_accuracy"] or 0.0) >= CHANCE_MULTIPLE / codec.codebook_size
    baseline_ok = summary["median_pve_mm"] < baseline_summary["median_pve_mm"]
    freeze_ok = codec.fingerprint() == fingerprint
    passed = pa_ok and freeze_ok and (bool(ablations) or (accuracy_ok and baseline_ok))
    return CheckResult(name, passed, time.time() - start, {
        "model": summary,
        "baseline": baseline_summary,
        "pa_mpjpe_below_mpjpe": pa_ok,
        "token_accuracy_above_chance": accuracy_ok,
        "beats_baseline": baseline_ok,
        "codec_unchanged": freeze_ok,
    })


def check_ablation_order(full: CheckResult, loss_3d: CheckResult, no_reprojection: CheckResult) -> CheckResult:
    reference = full.values["model"]
    three_d = loss_3d.values["model"]
    no_reproj = no_reprojection.values["model"]
    pve_degradation = no_reproj["pve_mm"] / reference["pve_mm"] - 1.0
    pa_degradation = no_reproj["pa_mpjpe_mm"] / reference["pa_mpjpe_mm"] - 1.0
    passed = (three_d["pve_mm"] > reference["pve_mm"]
              and no_reproj["pve_mm"] > reference["pve_mm"]
              and no_reproj["mpjpe_mm"] > reference["mpjpe_mm"]
              and pa_degradation < pve_degradation)
    return CheckResult("ablation_order", passed, 0.0, {
        "pve_mm": {"full": reference["pve_mm"], "loss_3d": three_d["pve_mm"], "no_reprojection": no_reproj["pve_mm"]},
        "pve_degradation": pve_degradation,
        "pa_mpjpe_degradation": pa_degradation,
    })


def main() -> None:
    """Entry point of script."""
    args = cli()
    os.makedirs(args.out, exist_ok=True)
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(os.path.join(args.out, "desk_acceptance.log"), mode="w", encoding="utf-8"),
        ],
    )

    checks = [check_quantization_oracle(seed=args.seed)]
    logger.info("Quantization oracle: %d mismatches in %.2f s", checks[0].values["mismatches"], checks[0].seconds)

    data_dir = os.path.join(args.out, "data")
    if os.path.isfile(os.path.join(data_dir, "manifest.json")):
        logger.info("Reusing dataset in %s", data_dir)
        dataset = SyntheticDataset.from_directory(data_dir)
    else:
        dataset = build_dataset(build_desk_template(), args.count, args.seed, show_progress=True)
        dataset.write(data_dir)

    codec_check, codec = check_codec(dataset, args.seed, args.codec_epochs, args.out)
    checks.append(codec_check)
    logger.info("Codec: val PVE %.2f mm (threshold %.2f), usage %.2f", codec_check.values["validation_pve_mm"],
                codec_check.values["threshold_mm"], codec_check.values["codebook_usage"])

    variants = [("predictor", [])]
    if not args.skip_ablations:
        variants += [("ablation_loss_3d", ["loss_3d"]), ("ablation_no_reprojection", ["no_reprojection"])]
    predictor_checks = {}
    for name, ablations in tqdm(variants, desc="predictor variants"):
        predictor_checks[name] = check_predictor(dataset, codec, args.seed, args.predictor_epochs, args.out,
                                                 ablations, name)
        checks.append(predictor_checks[name])
        logger.info("%s: test PVE %.2f mm, token accuracy %.4f", name,
                    predictor_checks[name].values["model"]["pve_mm"],
                    predictor_checks[name].values["model"]["token_accuracy"] or 0.0)
    if not args.skip_ablations:
        checks.append(check_ablation_order(predictor_checks["predictor"], predictor_checks["ablation_loss_3d"],
                                           predictor_checks["ablation_no_reprojection"]))

    results_path = os.path.join(args.out, "desk_acceptance.json")
    with open(results_path, "w") as out:
        json.dump([asdict(check) for check in checks], out, indent=2)
    for check in checks:
        logger.info("%-28s %s (%.1f s)", check.name, "PASS" if check.passed else "FAIL", check.seconds)
    logger.info("Results written to %s", results_path)


if __name__ == "__main__":
    main()
