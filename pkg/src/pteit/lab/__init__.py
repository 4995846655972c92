"""Experiment harness: phantoms, noise, the studies and the command line."""

from .config import LabConfig
from .phantom import (Inclusion, NoiseSpec, Phantom, add_noise, rasterize_phantom, reconstruction_phantoms,
                      single_inclusion, two_inclusions)
from .report import ExperimentReport
from .studies import run_bfgs_quality_study, run_hessian_accuracy_study, run_reconstruction_suite

__all__ = ["LabConfig", "Inclusion", "NoiseSpec", "Phantom", "add_noise", "rasterize_phantom",
           "reconstruction_phantoms", "single_inclusion", "two_inclusions", "ExperimentReport",
           "run_bfgs_quality_study", "run_hessian_accuracy_study", "run_reconstruction_suite"]
