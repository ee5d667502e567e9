"""Neural-network-based causal effect estimation with weighted regression operators."""

from .bench import BenchConfig, BenchRecord, MaaeRow, aae, emit_csv, emit_svg, run_benchmark
from .dataset import Dataset, read_csv, write_csv
from .estimators import Backend, EffectEstimate, estimate, nn_cwo
from .neural import Hyperparams
from .scm import Scenario, ScenarioSpec, build_scenario, exact_truth, mc_truth, sample, sample_do

__version__ = "0.1.0"
