"""Hybrid adversarial training loop.

Each step translates one synthetic image, cuts four patches from the
result, and builds two patch sets for the discriminator. In hybrid mode
the real set pairs the positional patches of the enhanced target with
nearest-neighbor patches retrieved from the real-world index (eight
patches per set, the generated ones duplicated to match); the
enhanced-only variant uses just the four target patches and never touches
the index. The discriminator regresses real patches to 1 and generated to
0 (least-squares objective); the generator additionally minimizes an L1
reconstruction term against the enhanced target, weighted by lambda.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from patchreal.data import ImageTensor, as_tensor
from patchreal.embedding import PatchEncoder
from patchreal.index import PatchIndex
from patchreal.networks import (
    Discriminator,
    Generator,
    init_weights,
    save_checkpoint,
)
from patchreal.patches import Patch, extract_patches, stack_patches

log = logging.getLogger(__name__)

MODES = ("hybrid", "enhanced_only")


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; the offending step was dumped to disk."""


@dataclass
class TrainingConfig:
    lambda_l1: float = 10.0
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    epochs: int = 20
    batch_size: int = 1
    mode: str = "hybrid"
    seed: int = 0
    checkpoint_interval: int = 0  # steps between checkpoints; 0 = final only
    resolution: int = 512
    patch_size: int = 196
    max_steps: int | None = None
    check_isolation: bool = False  # hash-verify D/G parameter isolation per step

    def __post_init__(self):
        self.mode = self.mode.replace("-", "_")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda_l1 <= 0:
            raise ValueError("lambda_l1 must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.betas = (float(self.betas[0]), float(self.betas[1]))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainingConfig":
        """Build from a flat key-value mapping (e.g. a parsed YAML file)."""
        known = dict(mapping)
        if "beta1" in known or "beta2" in known:
            known["betas"] = (known.pop("beta1", 0.5), known.pop("beta2", 0.999))
        valid = set(cls.__dataclass_fields__)
        unknown = set(known) - valid
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**known)


@dataclass
class StepRecord:
    """Per-step training telemetry, one JSON line each in the run log."""

    step: int
    loss_d: float
    loss_g_adv: float
    loss_g_l1: float
    match_distances: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class HybridBatch:
    """The two patch sets one discriminator/generator step consumes.

    ``generated_image`` keeps the live autograd graph of the translated
    image so the generator's L1 term and its adversarial term share one
    forward pass.
    """

    generated_set: list[Patch]
    real_set: list[Patch]
    mode: str
    generated_image: torch.Tensor
    match_distances: list[float] = field(default_factory=list)


def form_hybrid_batch(
    x: ImageTensor | torch.Tensor,
    target: ImageTensor | torch.Tensor,
    generator: Generator,
    index: PatchIndex | None = None,
    mode: str = "hybrid",
    encoder: PatchEncoder | None = None,
    patch_size: int = 196,
) -> HybridBatch:
    """Translate one synthetic image and assemble the patch sets.

    The generated image is computed once; its four patches keep the
    autograd graph. Target patches sit at the identical grid positions.
    In hybrid mode each generated patch is embedded and matched against
    the index, and the matched patch's pixels are retrieved via
    provenance; both the generated and real sets then hold eight patches.
    """
    mode = mode.replace("-", "_")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    x_t, target_t = as_tensor(x), as_tensor(target)
    if x_t.shape != target_t.shape:
        raise ValueError(
            f"synthetic/target shapes differ: {tuple(x_t.shape)} vs {tuple(target_t.shape)}"
        )

    x_hat = generator(x_t)
    gen_patches = extract_patches(x_hat, patch_size)
    target_patches = extract_patches(target_t, patch_size)

    if mode == "enhanced_only":
        return HybridBatch(
            generated_set=list(gen_patches),
            real_set=list(target_patches),
            mode=mode,
            generated_image=x_hat,
        )

    if index is None:
        raise ValueError("hybrid mode requires a patch index")
    if encoder is None:
        raise ValueError("hybrid mode requires the patch encoder used for the index")
    if encoder.backbone_id != index.backbone_id:
        raise ValueError(
            f"encoder backbone {encoder.backbone_id!r} does not match index "
            f"backbone {index.backbone_id!r}"
        )

    device = x_hat.device
    matched, distances = [], []
    for patch in gen_patches:
        record, dist = index.query(encoder.embed(patch.data.detach()))
        retrieved = index.retrieve_patch(record)
        matched.append(
            Patch(
                data=retrieved.data.to(device),
                source_id=retrieved.source_id,
                grid_pos=retrieved.grid_pos,
                pixel_origin=retrieved.pixel_origin,
            )
        )
        distances.append(dist)

    return HybridBatch(
        generated_set=list(gen_patches) + list(gen_patches),
        real_set=list(target_patches) + matched,
        mode=mode,
        generated_image=x_hat,
        match_distances=distances,
    )


def loss_discriminator(discriminator, batch: HybridBatch) -> torch.Tensor:
    """Least-squares loss: real patches toward 1, generated toward 0.

    Expectations are realized as means over every realism-map cell of
    every patch in a set. Generated patches are detached so this loss
    never reaches the generator.
    """
    if not batch.real_set or not batch.generated_set:
        raise ValueError("hybrid batch has an empty patch set")
    real = stack_patches(batch.real_set)
    generated = stack_patches(batch.generated_set).detach()
    real_scores = discriminator(real)
    gen_scores = discriminator(generated)
    return ((real_scores - 1.0) ** 2).mean() + (gen_scores**2).mean()


def loss_generator(
    discriminator,
    batch: HybridBatch,
    x_hat: torch.Tensor,
    target: ImageTensor | torch.Tensor,
    lambda_l1: float = 10.0,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Adversarial term plus weighted per-pixel L1 against the target.

    Returns (total, adversarial, l1) so telemetry can log the components.
    The L1 term is computed on the full images, not on patches, and uses
    the per-pixel mean (lambda's scale is tied to that choice).
    """
    if not batch.generated_set:
        raise ValueError("hybrid batch has an empty generated set")
    target_t = as_tensor(target)
    if x_hat.shape != target_t.shape:
        raise ValueError(
            f"generated/target shapes differ: {tuple(x_hat.shape)} vs {tuple(target_t.shape)}"
        )
    generated = stack_patches(batch.generated_set)
    adv = ((discriminator(generated) - 1.0) ** 2).mean()
    l1 = (x_hat - target_t).abs().mean()
    return adv + lambda_l1 * l1, adv, l1


def _params_digest(net: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


@dataclass
class TrainResult:
    records: list[StepRecord]
    checkpoints: list[Path]
    run_dir: Path | None
    generator: Generator
    discriminator: Discriminator


def train(
    config: TrainingConfig,
    paired_split,
    index: PatchIndex | None = None,
    encoder: PatchEncoder | None = None,
    out_dir: str | Path | None = None,
    device=None,
    generator: Generator | None = None,
    discriminator: Discriminator | None = None,
    step_callback=None,
) -> TrainResult:
    """Run the alternating D-step/G-step loop over the paired split.

    Both networks use their own adaptive-moment optimizer with the
    configured learning rate and betas. The discriminator steps first,
    then the generator; the loop is strictly sequential. A fixed seed
    fully determines initialization, data order, and therefore the loss
    log. Non-finite losses abort with a diagnostic dump rather than
    silently poisoning the run.
    """
    if config.mode == "hybrid" and index is None:
        raise ValueError("hybrid mode requires a patch index")
    if len(paired_split) == 0:
        raise ValueError("paired split is empty")

    device = torch.device(
        device if device is not None
        else ("cuda" if torch.cuda.is_available() else "cpu")
    )
    torch.manual_seed(config.seed)

    if generator is None:
        generator = init_weights(Generator(), config.seed)
    if discriminator is None:
        discriminator = init_weights(Discriminator(), config.seed + 1)
    generator = generator.to(device).train()
    discriminator = discriminator.to(device).train()

    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr, betas=config.betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr, betas=config.betas)

    run_dir = None
    log_file = None
    if out_dir is not None:
        run_dir = Path(out_dir)
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (run_dir / "manifest").write_text(
            json.dumps(
                {
                    "config": asdict(config),
                    "pairs": len(paired_split),
                    "device": str(device),
                    "index_entries": len(index) if index is not None else 0,
                },
                indent=1,
            )
        )
        log_file = open(run_dir / "log.jsonl", "w")

    records: list[StepRecord] = []
    checkpoints: list[Path] = []
    step = 0
    try:
        done = False
        for epoch in range(config.epochs):
            order = np.random.default_rng((config.seed, epoch)).permutation(
                len(paired_split)
            )
            for group_start in range(0, len(order), config.batch_size):
                group = order[group_start : group_start + config.batch_size]
                batches = []
                for i in group:
                    x, target = paired_split[int(i)]
                    x_t = as_tensor(x).to(device)
                    t_t = as_tensor(target).to(device)
                    batches.append(
                        (
                            form_hybrid_batch(
                                x_t,
                                t_t,
                                generator,
                                index=index if config.mode == "hybrid" else None,
                                mode=config.mode,
                                encoder=encoder,
                                patch_size=config.patch_size,
                            ),
                            t_t,
                        )
                    )

                # D step (generated patches detached inside the loss)
                g_digest = _params_digest(generator) if config.check_isolation else None
                opt_d.zero_grad()
                loss_d = torch.stack(
                    [loss_discriminator(discriminator, b) for b, _ in batches]
                ).mean()
                loss_d.backward()
                opt_d.step()
                if config.check_isolation and _params_digest(generator) != g_digest:
                    raise RuntimeError("D step modified generator parameters")

                # G step
                d_digest = (
                    _params_digest(discriminator) if config.check_isolation else None
                )
                opt_g.zero_grad()
                parts = [
                    loss_generator(
                        discriminator, b, b.generated_image, t, config.lambda_l1
                    )
                    for b, t in batches
                ]
                loss_g = torch.stack([p[0] for p in parts]).mean()
                loss_g.backward()
                opt_g.step()
                if config.check_isolation and _params_digest(discriminator) != d_digest:
                    raise RuntimeError("G step modified discriminator parameters")

                step += 1
                adv = float(torch.stack([p[1].detach() for p in parts]).mean())
                l1 = float(torch.stack([p[2].detach() for p in parts]).mean())
                distances = [d for b, _ in batches for d in b.match_distances]
                record = StepRecord(
                    step=step,
                    loss_d=float(loss_d.detach()),
                    loss_g_adv=adv,
                    loss_g_l1=l1,
                    match_distances=distances,
                )
                records.append(record)
                if log_file is not None:
                    log_file.write(record.to_json() + "\n")
                    log_file.flush()

                if not all(
                    math.isfinite(v) for v in (record.loss_d, adv, l1)
                ):
                    _dump_divergence(run_dir, record, batches)
                    raise TrainingDivergedError(
                        f"non-finite loss at step {step}: d={record.loss_d} "
                        f"adv={adv} l1={l1}"
                    )

                if step_callback is not None:
                    step_callback(record, generator, discriminator)

                if (
                    run_dir is not None
                    and config.checkpoint_interval > 0
                    and step % config.checkpoint_interval == 0
                ):
                    ckpt = save_checkpoint(
                        generator,
                        run_dir / "checkpoints" / f"step_{step:06d}.pt",
                        seed=config.seed,
                        epoch=epoch,
                        step=step,
                        discriminator=discriminator,
                    )
                    checkpoints.append(ckpt)

                if config.max_steps is not None and step >= config.max_steps:
                    done = True
                    break
            if done:
                break

        if run_dir is not None:
            ckpt = save_checkpoint(
                generator,
                run_dir / "checkpoints" / "final.pt",
                seed=config.seed,
                epoch=config.epochs,
                step=step,
                discriminator=discriminator,
            )
            checkpoints.append(ckpt)
    finally:
        if log_file is not None:
            log_file.close()

    return TrainResult(
        records=records,
        checkpoints=checkpoints,
        run_dir=run_dir,
        generator=generator,
        discriminator=discriminator,
    )


def _dump_divergence(run_dir: Path | None, record: StepRecord, batches) -> None:
    if run_dir is None:
        return
    x_hat = batches[0][0].generated_image.detach()
    dump = {
        "record": asdict(record),
        "generated_image_stats": {
            "min": float(x_hat.min()),
            "max": float(x_hat.max()),
            "finite": bool(torch.isfinite(x_hat).all()),
        },
    }
    (run_dir / "nan_dump.json").write_text(json.dumps(dump, indent=1))
    log.error("training diverged at step %d; dump written to %s", record.step, run_dir)
