"""Experiment configuration: flat ``section.key = value`` text files.

Blank lines and ``#`` comments are ignored. Unknown keys are errors, so a
typo never silently falls back to a default. Degradations are written as
compact strings::

    known.psf = gaussian:7:3.0      # also box:5, disk:7:2, motion:9:7:30, file:kernel.txt
    known.srf = synthetic:1.0       # Gaussian rows of this width, or file:srf.txt
"""
import os
from dataclasses import dataclass, field
from types import SimpleNamespace

from .degradation import SRF_ZOO_WIDTHS, DegradationSpec, make_gaussian_psf, make_psf, psf_zoo, read_psf, read_srf, synth_srf


class ConfigError(ValueError):
    pass


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none", "off") else float(text)


def _words(text):
    return tuple(w.strip() for w in text.split(",") if w.strip())


def _ints(text):
    return tuple(int(w) for w in _words(text))


SCHEMA = {
    "run": {"seed": (int, 0), "out": (str, "runs/default"), "precision": (str, "f32")},
    "data": {
        "height": (int, 64), "width": (int, 64), "hsi_bands": (int, 16), "msi_bands": (int, 3),
        "n_train": (int, 12), "n_test": (int, 4), "endmembers": (int, 8), "library_size": (int, 8),
        "spectra": (str, "absorption"), "tint": (float, 0.3), "blur": (float, 4.0), "sharpness": (float, 4.0),
        "patch": (int, 32), "stride": (int, 16), "manifest": (str, ""),
    },
    "known": {"psf": (str, "gaussian:7:3.0"), "srf": (str, "synthetic:1.0"), "scale": (int, 4), "snr_db": (_opt_float, None)},
    "unknown": {"psf": (str, "gaussian:7:1.5"), "srf": (str, "synthetic:2.0"), "snr_db": (_opt_float, None)},
    "pretrain": {"epochs": (int, 200), "batch_size": (int, 16), "lr": (float, 0.001), "hidden": (int, 32)},
    "u2k": {
        "lam": (float, 1.0), "mu": (float, 1.0), "k_dw": (int, 15), "epochs_a": (int, 100), "epochs_b": (int, 10),
        "n_inner": (int, 5), "dw_decay": (float, 0.1), "lr_spectral": (float, 0.001), "lr_spatial": (float, 0.01),
        "lr_dt": (float, 0.01), "batch_size": (int, 16), "crop": (int, 32), "strategy": (str, "gao"),
        "drop": (_words, ()),
    },
    "sweep": {
        "sigma_psf": (str, "gaussian:7:1.5"), "kind_psf": (str, "motion:7:5:30"), "shift_srf": (str, "synthetic:2.0"),
        "cells": (_words, ("matched", "sigma", "kind", "srf")),
    },
    "ablate": {"seeds": (int, 3), "adapt": (_bool, True)},
}

SWEEP_CELLS = ("matched", "sigma", "kind", "srf", "zoo")


@dataclass
class ExperimentConfig:
    sections: dict = field(default_factory=dict)
    base_dir: str = "."

    def __getattr__(self, name):
        try:
            return self.__dict__["sections"][name]
        except KeyError:
            raise AttributeError(name) from None

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    # ---------------------------------------------------------- degradations
    def parse_psf(self, text):
        kind, _, rest = text.partition(":")
        try:
            if kind == "file":
                return read_psf(self.resolve(rest))
            args = [float(a) for a in rest.split(":")] if rest else []
            if not args:
                raise ValueError("missing size")
            size = int(args[0])
            if kind == "gaussian":
                return make_gaussian_psf(size, *args[1:2])
            return make_psf(kind, size, *args[1:])
        except OSError as exc:
            raise ConfigError(f"cannot read PSF file: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad PSF {text!r}: {exc}") from None

    def parse_srf(self, text):
        kind, _, rest = text.partition(":")
        try:
            if kind == "file":
                srf = read_srf(self.resolve(rest))
            elif kind == "synthetic":
                srf = synth_srf(self.data.msi_bands, self.data.hsi_bands, float(rest))
            else:
                raise ValueError(f"unknown SRF kind {kind!r}")
        except OSError as exc:
            raise ConfigError(f"cannot read SRF file: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"bad SRF {text!r}: {exc}") from None
        if srf.matrix.shape != (self.data.msi_bands, self.data.hsi_bands):
            raise ConfigError(f"SRF shape {srf.matrix.shape} does not match data bands {(self.data.msi_bands, self.data.hsi_bands)}")
        return srf

    def spec(self, psf, srf, snr_db=None, name=""):
        return DegradationSpec(self.parse_psf(psf), self.parse_srf(srf), self.known.scale, snr_db, name)

    def known_spec(self):
        return self.spec(self.known.psf, self.known.srf, self.known.snr_db, "known")

    def unknown_spec(self):
        return self.spec(self.unknown.psf, self.unknown.srf, self.unknown.snr_db, "unknown")

    def sweep_specs(self):
        """[(cell name, spec)]; ``zoo`` expands to every zoo kernel and SRF width."""
        k, sw = self.known, self.sweep
        table = {
            "matched": (k.psf, k.srf),
            "sigma": (sw.sigma_psf, k.srf),
            "kind": (sw.kind_psf, k.srf),
            "srf": (k.psf, sw.shift_srf),
        }
        out = []
        for cell in sw.cells:
            if cell != "zoo":
                out.append((cell, self.spec(*table[cell], self.unknown.snr_db, cell)))
                continue
            srf = self.parse_srf(k.srf)
            for name, psf in psf_zoo().items():
                out.append((name, DegradationSpec(psf, srf, k.scale, self.unknown.snr_db, name)))
            for w in SRF_ZOO_WIDTHS:
                name = f"srf_{w:g}"
                out.append((name, DegradationSpec(self.parse_psf(k.psf), self.parse_srf(f"synthetic:{w}"), k.scale, self.unknown.snr_db, name)))
        return out

    # ---------------------------------------------------------- validation
    def validate(self):
        d = self.data
        s = self.known.scale
        if s < 1:
            raise ConfigError("known.scale must be >= 1")
        if d.height % s or d.width % s:
            raise ConfigError(f"scale {s} does not divide data extents {(d.height, d.width)}")
        if d.patch % s:
            raise ConfigError(f"scale {s} does not divide data.patch {d.patch}")
        if d.patch > min(d.height, d.width):
            raise ConfigError(f"data.patch {d.patch} exceeds cube extent")
        if d.msi_bands > d.hsi_bands:
            raise ConfigError("data.msi_bands exceeds data.hsi_bands")
        if d.library_size and d.endmembers > d.library_size:
            raise ConfigError("data.endmembers exceeds data.library_size")
        if d.n_train < 1 or d.n_test < 1:
            raise ConfigError("need at least one train and one test cube")
        if d.manifest and not os.path.exists(self.resolve(d.manifest)):
            raise ConfigError(f"data.manifest {d.manifest!r} does not exist")
        if self.run.precision not in ("f32", "f64"):
            raise ConfigError(f"run.precision must be f32 or f64, got {self.run.precision!r}")
        for cell in self.sweep.cells:
            if cell not in SWEEP_CELLS:
                raise ConfigError(f"unknown sweep cell {cell!r}; expected some of {SWEEP_CELLS}")
        # parse every degradation now so a bad string fails before any work
        self.known_spec()
        self.unknown_spec()
        self.sweep_specs()
        return self


def defaults():
    return ExperimentConfig({sec: SimpleNamespace(**{k: v for k, (_, v) in keys.items()}) for sec, keys in SCHEMA.items()})


def parse_config(text, base_dir="."):
    cfg = defaults()
    cfg.base_dir = base_dir
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected 'section.key = value'")
        section, dot, name = key.strip().partition(".")
        if not dot or section not in SCHEMA or name not in SCHEMA[section]:
            raise ConfigError(f"line {n}: unknown key {key.strip()!r}")
        conv = SCHEMA[section][name][0]
        try:
            setattr(cfg.sections[section], name, conv(value.strip()))
        except ValueError as exc:
            raise ConfigError(f"line {n}: bad value for {key.strip()}: {exc}") from None
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path))).validate()
