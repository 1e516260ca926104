from .data_model import LabeledDataset, load_csv, load_model, save_model
from .solver import CoefMatrix, SolverOptions, solve, solve_path
from .suffstats import SuffStats, compute_stats

__all__ = ['LabeledDataset', 'load_csv', 'load_model', 'save_model', 'CoefMatrix',
           'SolverOptions', 'solve', 'solve_path', 'SuffStats', 'compute_stats']
