"""Synthetic multicoil datasets of perturbed Shepp-Logan "volumes" on disk.

Layout of a dataset directory::

    manifest.txt            one line per slice: <path> <height>x<width> <split>
    config.ini              the configuration that produced it
    v000/sensitivities.tensor
    v000/s00_kspace.tensor  fully sampled noisy k-space, complex (coils, H, W)
    v000/s00_target.tensor  noiseless RSS ground truth, real (H, W)
    v000/s00_phantom.tensor the complex-valued object, (H, W)

Paths in the manifest are slice prefixes relative to the dataset directory.
Volumes are numbered consecutively over the train, validation and test splits.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from kslab.config import config_to_ini
from kslab.forward import AcquisitionSim, MulticoilKSpace, simulate_acquisition, simulate_sensitivities
from kslab.errors import TensorFormatError
from kslab.phantom import perturbed_ellipses, shepp_logan_phantom
from kslab.tensorio import read_tensor, write_tensor

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.txt"


@dataclass(frozen=True, eq=False)
class Slice:
    """One fully sampled slice as stored in a dataset."""

    slice_id: str
    volume: int
    split: str
    kspace: np.ndarray
    target: np.ndarray
    sensitivities: np.ndarray
    phantom: np.ndarray | None = None

    @property
    def shape(self):
        return self.target.shape


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    shape: tuple
    split: str

    @property
    def volume(self):
        return int(self.path.split("/")[0][1:])


def volume_splits(cfg):
    """Split name of every volume, in volume order."""
    counts = cfg.split_counts()
    return [name for name, count in zip(SPLITS, counts) for _ in range(count)]


def slice_positions(n):
    """Relative positions in [-0.6, 0.6] of ``n`` slices through one volume."""
    return np.linspace(-0.6, 0.6, n) if n > 1 else np.zeros(1)


def synthesize_volume(cfg, volume):
    """Phantoms, sensitivities and noisy full k-spaces of one volume.

    Returns (sensitivities, [(phantom, kspace, target), ...]).
    """
    maps = simulate_sensitivities(cfg.height, cfg.width, cfg.n_coils)
    out = []
    for index, position in enumerate(slice_positions(cfg.slices_per_volume)):
        # same perturbation draw for every slice of the volume
        rng = np.random.Generator(np.random.PCG64([cfg.data_seed, volume]))
        image = shepp_logan_phantom(cfg.height, cfg.width, perturbed_ellipses(rng, position)).astype(complex)
        noise_seed = int(np.random.SeedSequence([cfg.noise_seed, volume, index]).generate_state(1)[0])
        sim = AcquisitionSim(image, maps, noise_std=cfg.noise_std, rng_seed=noise_seed)
        kspace, target = simulate_acquisition(sim)
        out.append((image, kspace.coils, target))
    return maps, out


def write_dataset(cfg, root):
    """Synthesize every volume of ``cfg`` under ``root``; returns the manifest entries."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for volume, split in enumerate(volume_splits(cfg)):
        vdir = root / f"v{volume:03d}"
        vdir.mkdir(exist_ok=True)
        maps, slices = synthesize_volume(cfg, volume)
        write_tensor(vdir / "sensitivities.tensor", maps)
        for index, (image, kspace, target) in enumerate(slices):
            prefix = f"v{volume:03d}/s{index:02d}"
            write_tensor(root / f"{prefix}_kspace.tensor", kspace)
            write_tensor(root / f"{prefix}_target.tensor", target)
            write_tensor(root / f"{prefix}_phantom.tensor", image)
            entries.append(ManifestEntry(prefix, target.shape, split))
    lines = [f"{e.path} {e.shape[0]}x{e.shape[1]} {e.split}" for e in entries]
    (root / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    (root / "config.ini").write_text(config_to_ini(cfg), encoding="utf-8")
    return entries


def read_manifest(root):
    """Parse ``manifest.txt``; raises ``FileNotFoundError`` if it is missing."""
    entries = []
    text = (Path(root) / MANIFEST).read_text(encoding="utf-8")
    for number, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[2] not in SPLITS:
            raise TensorFormatError(f"{MANIFEST}:{number}: malformed line {line!r}")
        height, width = (int(v) for v in parts[1].split("x"))
        entries.append(ManifestEntry(parts[0], (height, width), parts[2]))
    return entries


def load_split(root, split, with_phantom=False):
    """All slices of one split, in manifest order."""
    root = Path(root)
    maps_cache = {}
    out = []
    for entry in read_manifest(root):
        if entry.split != split:
            continue
        volume = entry.volume
        if volume not in maps_cache:
            maps_cache[volume] = read_tensor(root / f"v{volume:03d}" / "sensitivities.tensor")
        kspace = read_tensor(root / f"{entry.path}_kspace.tensor")
        target = read_tensor(root / f"{entry.path}_target.tensor")
        if target.shape != entry.shape or kspace.shape[1:] != entry.shape:
            raise TensorFormatError(f"{entry.path}: stored shape does not match the manifest")
        phantom = read_tensor(root / f"{entry.path}_phantom.tensor") if with_phantom else None
        out.append(Slice(entry.path, volume, split, kspace, target, maps_cache[volume], phantom))
    return out


def full_kspace(item):
    return MulticoilKSpace(item.kspace)
