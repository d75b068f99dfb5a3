"""causalforge: perturbation-based causal ground truth from switch-level
circuit simulation, a learned pairwise causal estimator, classical
baselines, exact metrics, and explanation probes.
"""

__version__ = "0.1.0"

from .netlist import Netlist, Transistor, Wire, chain_netlist, gen_synthetic_netlist, load_netlist, save_netlist  # noqa: F401
from .sim import SimConfig, SimState, StateRecording, run_period, simulate_periods, step_half_clock  # noqa: F401
from .perturb import CausalGroundTruth, PerturbSpec, binarize_tce, compute_tce, dedup_unique, ground_truth_sweep  # noqa: F401
from .dataset import NoiseSpec, PairSample, SplitPlan, add_noise, build_split, gen_linear_network, make_pairs, read_dataset, undersample_negatives, write_dataset  # noqa: F401
from .baselines import corr_score, granger_score, mi_score  # noqa: F401
from .estimator import Checkpoint, EstimatorConfig, TrainConfig, focal_loss, forward, init_estimator, load_checkpoint, random_shift_augment, save_checkpoint, train  # noqa: F401
from .metrics import auprc, auroc, evaluate_method, ground_truth_stats  # noqa: F401
from .probes import SaliencyMap, grad_cam, temporal_reversal_probe  # noqa: F401
