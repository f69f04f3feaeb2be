"""End-to-end model: parameters, forward/backward passes and the overfit loop."""

from .ledger import LedgerError, SymbolLedger
from .model import SYMBOLS, ForwardResult, backward, forward, predict_head, predict_head_vjp
from .params import ModelParams, init_params, load_params, save_params
from .train import TRAJECTORY_HEADER, TrainingRun, train_steps
