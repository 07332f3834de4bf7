"""Inference latency, throughput, and memory benchmarking.

Timing wraps the forward pass only (no disk I/O, no preprocessing), with
device synchronization so measurements cover completed computation. Runs
are strictly serial. Warmup iterations are excluded from statistics;
latency and FPS are reported as mean +/- standard deviation over the
timed runs, alongside the peak device memory.
"""

from __future__ import annotations

import platform
import resource
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from patchreal.networks import Generator, load_checkpoint

# Published timings for this generator on an NVIDIA RTX 4070 Super
# (i7-13700KF, 32GB DDR4). Reference metadata only, never pass/fail
# thresholds: hardware differs.
REFERENCE_ROWS = [
    {"resolution": (720, 1280), "latency_ms": (12.347, 0.279), "fps": (81.03, 1.80), "vram_gb": 0.8},
    {"resolution": (1080, 1920), "latency_ms": (29.642, 0.175), "fps": (33.74, 0.20), "vram_gb": 1.5},
]

_COV_FLAG_THRESHOLD = 0.10
_INPUT_POOL = 4


@dataclass
class BenchmarkReport:
    """Latency/FPS/memory statistics for one resolution."""

    resolution: tuple[int, int]  # (H, W)
    latency_ms_mean: float
    latency_ms_std: float
    fps_mean: float
    fps_std: float
    peak_device_memory_gb: float
    memory_kind: str
    warmup_runs: int
    timed_runs: int
    device_descriptor: str
    latencies_ms: list[float] = field(default_factory=list, repr=False)
    error: str | None = None

    @property
    def cov_flagged(self) -> bool:
        """True when latency jitter exceeds 10% of the mean (noisy device)."""
        if self.latency_ms_mean == 0:
            return False
        return self.latency_ms_std / self.latency_ms_mean > _COV_FLAG_THRESHOLD

    @property
    def resolution_label(self) -> str:
        h, w = self.resolution
        return f"{w}x{h}"


def fps_latency_consistent(report: BenchmarkReport, slack: float = 0.05) -> bool:
    """Check that mean FPS and mean latency tell the same story.

    mean(1000/x) exceeds 1000/mean(x) by roughly (std/mean)^2 relative
    (Jensen's gap), so the allowed deviation scales with the observed
    jitter: tight on a quiet device, permissive on a noisy one.
    """
    if report.error is not None or report.latency_ms_mean <= 0:
        return False
    inverse = 1000.0 / report.latency_ms_mean
    cov = report.latency_ms_std / report.latency_ms_mean
    tolerance = inverse * (3.0 * cov**2 + slack)
    return abs(report.fps_mean - inverse) <= tolerance


def parse_resolutions(text: str) -> list[tuple[int, int]]:
    """Parse 'WxH,WxH' (video convention) into (H, W) tuples."""
    out = []
    for token in text.split(","):
        token = token.strip().lower()
        w, h = token.split("x")
        out.append((int(h), int(w)))
    return out


def _device_descriptor(device: torch.device) -> str:
    if device.type == "cuda":
        return torch.cuda.get_device_name(device)
    cpu = platform.processor() or platform.machine()
    return f"cpu [{cpu}] ({torch.get_num_threads()} threads)"


def _peak_memory_gb(device: torch.device) -> tuple[float, str]:
    if device.type == "cuda":
        return torch.cuda.max_memory_allocated(device) / 1024**3, "cuda-allocator-peak"
    # ru_maxrss is in KiB on Linux; a whole-process high-water mark
    rss_kib = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return rss_kib / 1024**2, "process-peak-rss"


def _synchronize(device: torch.device) -> None:
    if device.type == "cuda":
        torch.cuda.synchronize(device)


def benchmark(
    checkpoint: str | Path | Generator,
    resolutions: list[tuple[int, int]],
    runs: int = 100,
    warmup: int = 10,
    device=None,
    seed: int = 0,
) -> list[BenchmarkReport]:
    """Time the generator forward pass at each resolution.

    Inputs are random tensors at the exact target resolution (a small
    pool, cycled). Per-resolution out-of-memory failures are recorded in
    the corresponding report and the remaining resolutions still run.
    """
    if runs <= 0:
        raise ValueError("runs must be positive")
    device = torch.device(
        device if device is not None
        else ("cuda" if torch.cuda.is_available() else "cpu")
    )
    if isinstance(checkpoint, Generator):
        generator = checkpoint.to(device).eval()
    else:
        generator, _ = load_checkpoint(checkpoint, device=device)

    descriptor = _device_descriptor(device)
    rng = torch.Generator().manual_seed(seed)
    reports = []
    for resolution in resolutions:
        h, w = int(resolution[0]), int(resolution[1])
        try:
            if device.type == "cuda":
                torch.cuda.reset_peak_memory_stats(device)
            pool = [
                (torch.rand(1, 3, h, w, generator=rng) * 2.0 - 1.0).to(device)
                for _ in range(min(_INPUT_POOL, runs))
            ]
            with torch.no_grad():
                for i in range(warmup):
                    generator(pool[i % len(pool)])
                _synchronize(device)
                latencies = []
                for i in range(runs):
                    x = pool[i % len(pool)]
                    _synchronize(device)
                    start = time.perf_counter()
                    generator(x)
                    _synchronize(device)
                    latencies.append((time.perf_counter() - start) * 1000.0)
            fps = [1000.0 / ms for ms in latencies]
            peak_gb, memory_kind = _peak_memory_gb(device)
            reports.append(
                BenchmarkReport(
                    resolution=(h, w),
                    latency_ms_mean=statistics.fmean(latencies),
                    latency_ms_std=statistics.pstdev(latencies) if runs > 1 else 0.0,
                    fps_mean=statistics.fmean(fps),
                    fps_std=statistics.pstdev(fps) if runs > 1 else 0.0,
                    peak_device_memory_gb=peak_gb,
                    memory_kind=memory_kind,
                    warmup_runs=warmup,
                    timed_runs=runs,
                    device_descriptor=descriptor,
                    latencies_ms=latencies,
                )
            )
        except (torch.cuda.OutOfMemoryError, MemoryError) as exc:
            if device.type == "cuda":
                torch.cuda.empty_cache()
            reports.append(
                BenchmarkReport(
                    resolution=(h, w),
                    latency_ms_mean=float("nan"),
                    latency_ms_std=float("nan"),
                    fps_mean=float("nan"),
                    fps_std=float("nan"),
                    peak_device_memory_gb=float("nan"),
                    memory_kind="n/a",
                    warmup_runs=warmup,
                    timed_runs=0,
                    device_descriptor=descriptor,
                    error=f"out of memory: {exc}",
                )
            )
    return reports


def format_report(reports: list[BenchmarkReport], include_reference: bool = False) -> str:
    """Render reports as a text table: Resolution, Latency, FPS, VRAM."""
    lines = []
    if reports:
        first = reports[0]
        lines.append(f"# device: {first.device_descriptor}")
        lines.append(
            f"# timed runs: {first.timed_runs}, warmup (excluded): {first.warmup_runs}, "
            f"memory metric: {first.memory_kind}"
        )
    header = f"{'Resolution':<12} {'Latency (ms)':<22} {'FPS':<18} {'VRAM (GB)':<10}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in reports:
        if r.error is not None:
            lines.append(f"{r.resolution_label:<12} FAILED: {r.error}")
            continue
        flag = "  [high jitter]" if r.cov_flagged else ""
        lines.append(
            f"{r.resolution_label:<12} "
            f"{r.latency_ms_mean:.3f} ± {r.latency_ms_std:.3f}".ljust(35)
            + f"{r.fps_mean:.2f} ± {r.fps_std:.2f}".ljust(19)
            + f"{r.peak_device_memory_gb:.2f}{flag}"
        )
    if include_reference:
        lines.append("")
        lines.append("# reference (published, NVIDIA RTX 4070 Super; not comparable across hardware):")
        for row in REFERENCE_ROWS:
            h, w = row["resolution"]
            lat, fps = row["latency_ms"], row["fps"]
            lines.append(
                f"{f'{w}x{h}':<12} "
                f"{lat[0]:.3f} ± {lat[1]:.3f}".ljust(35)
                + f"{fps[0]:.2f} ± {fps[1]:.2f}".ljust(19)
                + f"{row['vram_gb']:.2f}"
            )
    return "\n".join(lines)
